//! Quarter-turn rotation of I/Q frames and the two-view sampler used by
//! contrastive pretraining.

use rand::Rng as _;

use crate::dataio::IqFrame;
use crate::seed::Rng;

/// Rotation by a multiple of π/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotationAngle {
    Zero,
    HalfPi,
    Pi,
    ThreeHalvesPi,
}

impl RotationAngle {
    pub const ALL: [RotationAngle; 4] = [
        RotationAngle::Zero,
        RotationAngle::HalfPi,
        RotationAngle::Pi,
        RotationAngle::ThreeHalvesPi,
    ];

    /// Number of quarter turns, 0..4.
    pub fn quarter_turns(self) -> u8 {
        self as u8
    }

    pub fn from_quarter_turns(k: u8) -> Self {
        Self::ALL[(k % 4) as usize]
    }

    pub fn radians(self) -> f64 {
        self.quarter_turns() as f64 * std::f64::consts::FRAC_PI_2
    }

    /// Composition `self` then `other`.
    pub fn then(self, other: RotationAngle) -> Self {
        Self::from_quarter_turns(self.quarter_turns() + other.quarter_turns())
    }

    pub fn inverse(self) -> Self {
        Self::from_quarter_turns(4 - self.quarter_turns())
    }

    pub fn sample(rng: &mut Rng) -> Self {
        Self::from_quarter_turns(rng.random_range(0..4u8))
    }

    /// Rotates one sample. cos θ and sin θ are in {−1, 0, 1}, so the result
    /// is a permutation and negation of the inputs with no rounding.
    #[inline]
    pub fn apply(self, i: f32, q: f32) -> (f32, f32) {
        match self {
            RotationAngle::Zero => (i, q),
            RotationAngle::HalfPi => (-q, i),
            RotationAngle::Pi => (-i, -q),
            RotationAngle::ThreeHalvesPi => (q, -i),
        }
    }
}

pub fn rotate(frame: &IqFrame, theta: RotationAngle) -> IqFrame {
    let n = frame.len();
    let mut data = vec![0.0f32; 2 * n];
    for (k, (&i, &q)) in frame.i().iter().zip(frame.q()).enumerate() {
        let (ri, rq) = theta.apply(i, q);
        data[k] = ri;
        data[n + k] = rq;
    }
    IqFrame::from_raw(data)
}

/// Two independently rotated views of one source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_i: IqFrame,
    pub view_j: IqFrame,
    pub theta_i: RotationAngle,
    pub theta_j: RotationAngle,
    pub source_index: usize,
}

pub fn make_pair(frame: &IqFrame, source_index: usize, rng: &mut Rng) -> ViewPair {
    let theta_i = RotationAngle::sample(rng);
    let theta_j = RotationAngle::sample(rng);
    ViewPair {
        view_i: rotate(frame, theta_i),
        view_j: rotate(frame, theta_j),
        theta_i,
        theta_j,
        source_index,
    }
}
