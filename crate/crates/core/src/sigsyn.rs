//! Synthetic RadioML-style I/Q frames.
//!
//! A frame is produced in two stages: [`modulate`] builds a clean complex
//! baseband waveform with unit average power and a random carrier phase, and
//! [`apply_channel`] scales it by the channel gain and adds complex white
//! Gaussian noise at the requested SNR.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, IqFrame, Provenance, SplitTag};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, rng_from_seed, Rng};

/// The eleven modulation classes. The discriminant is the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ModulationScheme {
    Bpsk = 0,
    Qpsk = 1,
    Psk8 = 2,
    Pam4 = 3,
    Qam16 = 4,
    Qam64 = 5,
    Gfsk = 6,
    Cpfsk = 7,
    Wbfm = 8,
    AmDsb = 9,
    AmSsb = 10,
}

pub const NUM_CLASSES: usize = 11;

impl ModulationScheme {
    pub const ALL: [ModulationScheme; NUM_CLASSES] = [
        ModulationScheme::Bpsk,
        ModulationScheme::Qpsk,
        ModulationScheme::Psk8,
        ModulationScheme::Pam4,
        ModulationScheme::Qam16,
        ModulationScheme::Qam64,
        ModulationScheme::Gfsk,
        ModulationScheme::Cpfsk,
        ModulationScheme::Wbfm,
        ModulationScheme::AmDsb,
        ModulationScheme::AmSsb,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::UnknownScheme(format!("code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationScheme::Bpsk => "BPSK",
            ModulationScheme::Qpsk => "QPSK",
            ModulationScheme::Psk8 => "8PSK",
            ModulationScheme::Pam4 => "PAM4",
            ModulationScheme::Qam16 => "QAM16",
            ModulationScheme::Qam64 => "QAM64",
            ModulationScheme::Gfsk => "GFSK",
            ModulationScheme::Cpfsk => "CPFSK",
            ModulationScheme::Wbfm => "WBFM",
            ModulationScheme::AmDsb => "AM-DSB",
            ModulationScheme::AmSsb => "AM-SSB",
        }
    }

    pub fn is_digital(self) -> bool {
        !matches!(
            self,
            ModulationScheme::Wbfm | ModulationScheme::AmDsb | ModulationScheme::AmSsb
        )
    }

    /// Bits carried per symbol for schemes with a finite symbol alphabet.
    pub fn bits_per_symbol(self) -> Option<usize> {
        match self {
            ModulationScheme::Bpsk | ModulationScheme::Gfsk | ModulationScheme::Cpfsk => Some(1),
            ModulationScheme::Qpsk | ModulationScheme::Pam4 => Some(2),
            ModulationScheme::Psk8 => Some(3),
            ModulationScheme::Qam16 => Some(4),
            ModulationScheme::Qam64 => Some(6),
            _ => None,
        }
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_uppercase())
            .collect();
        let scheme = match key.as_str() {
            "BPSK" => ModulationScheme::Bpsk,
            "QPSK" => ModulationScheme::Qpsk,
            "8PSK" | "PSK8" => ModulationScheme::Psk8,
            "PAM4" | "4PAM" => ModulationScheme::Pam4,
            "QAM16" | "16QAM" => ModulationScheme::Qam16,
            "QAM64" | "64QAM" => ModulationScheme::Qam64,
            "GFSK" => ModulationScheme::Gfsk,
            "CPFSK" => ModulationScheme::Cpfsk,
            "WBFM" => ModulationScheme::Wbfm,
            "AMDSB" => ModulationScheme::AmDsb,
            "AMSSB" => ModulationScheme::AmSsb,
            _ => return Err(Error::UnknownScheme(s.to_string())),
        };
        Ok(scheme)
    }
}

fn gray(k: usize) -> usize {
    k ^ (k >> 1)
}

/// Gray-coded amplitude levels `2k - (m-1)` for an m-ary axis, indexed by bit value.
fn gray_levels(m: usize) -> Vec<f64> {
    let mut table = vec![0.0; m];
    for k in 0..m {
        table[gray(k)] = (2 * k) as f64 - (m - 1) as f64;
    }
    table
}

/// Constellation of a linearly modulated scheme, indexed by the integer value
/// of the symbol's bits (MSB first). Average power over the points is 1.
pub fn constellation(scheme: ModulationScheme) -> Option<Vec<Complex64>> {
    let points = match scheme {
        ModulationScheme::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
        ModulationScheme::Qpsk => (0..4)
            .map(|v| {
                let i = 1.0 - 2.0 * ((v >> 1) & 1) as f64;
                let q = 1.0 - 2.0 * (v & 1) as f64;
                Complex64::new(i / SQRT_2, q / SQRT_2)
            })
            .collect(),
        ModulationScheme::Psk8 => {
            let mut table = vec![Complex64::new(0.0, 0.0); 8];
            for k in 0..8 {
                table[gray(k)] = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 8.0);
            }
            table
        }
        ModulationScheme::Pam4 => {
            let scale = 5f64.sqrt();
            gray_levels(4)
                .into_iter()
                .map(|l| Complex64::new(l / scale, 0.0))
                .collect()
        }
        ModulationScheme::Qam16 => square_qam(4, 10f64.sqrt()),
        ModulationScheme::Qam64 => square_qam(8, 42f64.sqrt()),
        _ => return None,
    };
    Some(points)
}

fn square_qam(side: usize, scale: f64) -> Vec<Complex64> {
    let levels = gray_levels(side);
    let bits = side.trailing_zeros();
    (0..side * side)
        .map(|v| {
            let i = levels[v >> bits];
            let q = levels[v & (side - 1)];
            Complex64::new(i / scale, q / scale)
        })
        .collect()
}

/// Maps a bit stream onto constellation symbols, MSB first within a symbol.
/// Trailing bits that do not fill a symbol are ignored.
pub fn map_symbols(scheme: ModulationScheme, bits: &[u8]) -> Result<Vec<Complex64>> {
    let (table, k) = match (constellation(scheme), scheme.bits_per_symbol()) {
        (Some(t), Some(k)) => (t, k),
        _ => {
            return Err(Error::UnknownScheme(format!(
                "{scheme} has no symbol constellation"
            )))
        }
    };
    Ok(bits
        .chunks_exact(k)
        .map(|chunk| {
            let v = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
            table[v]
        })
        .collect())
}

/// Pulse shaping applied to linearly modulated symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PulseShape {
    /// Each symbol held for `sps` samples.
    Rectangular,
    /// Root-raised-cosine with the given roll-off, spanning 6 symbols each side.
    RootRaisedCosine { rolloff: f64 },
}

impl Default for PulseShape {
    fn default() -> Self {
        PulseShape::Rectangular
    }
}

const RRC_SPAN: usize = 6;
const FSK_INDEX: f64 = 0.5;
const GFSK_BT: f64 = 0.35;

// Analog message: three incommensurate tones (cycles per sample).
const TONE_FREQS: [f64; 3] = [0.01, 0.01 * SQRT_2, 0.01 * 1.618_033_988_749_895];
const TONE_AMPS: [f64; 3] = [0.5, 0.3, 0.2];
const AM_INDEX: f64 = 0.5;
const FM_DEVIATION: f64 = 0.05;

fn rrc_taps(rolloff: f64, sps: usize, span: usize) -> Vec<f64> {
    let n = 2 * span * sps + 1;
    let b = rolloff;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - (span * sps) as f64) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && (t.abs() - 1.0 / (4.0 * b)).abs() < 1e-9 {
                b / SQRT_2
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
                let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|t| *t /= energy);
    taps
}

fn gaussian_taps(bt: f64, sps: usize, span: usize) -> Vec<f64> {
    let n = 2 * span * sps + 1;
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * bt);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - (span * sps) as f64) / sps as f64;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn random_bits(rng: &mut Rng, count: usize) -> Vec<u8> {
    (0..count).map(|_| rng.random::<bool>() as u8).collect()
}

fn shape_symbols(symbols: &[Complex64], frame_len: usize, sps: usize, pulse: PulseShape) -> Vec<Complex64> {
    match pulse {
        PulseShape::Rectangular => (0..frame_len).map(|n| symbols[n / sps]).collect(),
        PulseShape::RootRaisedCosine { rolloff } => {
            // `symbols` carries RRC_SPAN guard symbols on each side.
            let taps = rrc_taps(rolloff, sps, RRC_SPAN);
            let half = RRC_SPAN * sps;
            let offset = RRC_SPAN * sps;
            (0..frame_len)
                .map(|n| {
                    let center = n + offset;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (k, s) in symbols.iter().enumerate() {
                        let pos = k * sps;
                        let lag = center as isize - pos as isize + half as isize;
                        if lag >= 0 && (lag as usize) < taps.len() {
                            acc += s * taps[lag as usize];
                        }
                    }
                    acc
                })
                .collect()
        }
    }
}

fn fsk_phase(freq: &[f64], sps: usize) -> Vec<Complex64> {
    let step = PI * FSK_INDEX / sps as f64;
    let mut phase = 0.0;
    freq.iter()
        .map(|f| {
            phase += step * f;
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

fn tone_phases(rng: &mut Rng) -> (f64, [f64; 3]) {
    let t0 = rng.random::<f64>() * 1.0e6;
    let phases = [
        rng.random::<f64>() * 2.0 * PI,
        rng.random::<f64>() * 2.0 * PI,
        rng.random::<f64>() * 2.0 * PI,
    ];
    (t0, phases)
}

fn message(t: f64, phases: &[f64; 3]) -> f64 {
    (0..3)
        .map(|k| TONE_AMPS[k] * (2.0 * PI * TONE_FREQS[k] * t + phases[k]).cos())
        .sum()
}

/// Produces `frame_len` clean baseband samples of `scheme`.
///
/// Digital schemes draw ⌈frame_len/sps⌉ symbols of random bits; analog schemes
/// sample the three-tone message at a random time offset. The waveform is
/// scaled to unit average power and rotated by a uniform random carrier phase.
pub fn modulate(
    scheme: ModulationScheme,
    frame_len: usize,
    sps: usize,
    pulse: PulseShape,
    rng: &mut Rng,
) -> Result<Vec<Complex64>> {
    if frame_len == 0 || sps == 0 {
        return Err(Error::InvalidConfig("frame_len and sps must be positive".into()));
    }
    let n_symbols = frame_len.div_ceil(sps);
    let mut signal = match scheme {
        ModulationScheme::Bpsk
        | ModulationScheme::Qpsk
        | ModulationScheme::Psk8
        | ModulationScheme::Pam4
        | ModulationScheme::Qam16
        | ModulationScheme::Qam64 => {
            let k = scheme.bits_per_symbol().expect("linear scheme");
            let guard = match pulse {
                PulseShape::Rectangular => 0,
                PulseShape::RootRaisedCosine { .. } => 2 * RRC_SPAN,
            };
            let bits = random_bits(rng, (n_symbols + guard) * k);
            let symbols = map_symbols(scheme, &bits)?;
            shape_symbols(&symbols, frame_len, sps, pulse)
        }
        ModulationScheme::Cpfsk => {
            let bits = random_bits(rng, n_symbols);
            let freq: Vec<f64> = (0..frame_len)
                .map(|n| 1.0 - 2.0 * bits[n / sps] as f64)
                .collect();
            fsk_phase(&freq, sps)
        }
        ModulationScheme::Gfsk => {
            let span = 2;
            let bits = random_bits(rng, n_symbols + 2 * span);
            let nrz: Vec<f64> = (0..(n_symbols + 2 * span) * sps)
                .map(|n| 1.0 - 2.0 * bits[n / sps] as f64)
                .collect();
            let taps = gaussian_taps(GFSK_BT, sps, span);
            let freq: Vec<f64> = (0..frame_len)
                .map(|n| {
                    let center = n + span * sps;
                    taps.iter()
                        .enumerate()
                        .map(|(k, t)| t * nrz[center + k - span * sps])
                        .sum()
                })
                .collect();
            fsk_phase(&freq, sps)
        }
        ModulationScheme::AmDsb => {
            let (t0, ph) = tone_phases(rng);
            (0..frame_len)
                .map(|n| Complex64::new(1.0 + AM_INDEX * message(t0 + n as f64, &ph), 0.0))
                .collect()
        }
        ModulationScheme::AmSsb => {
            let (t0, ph) = tone_phases(rng);
            (0..frame_len)
                .map(|n| {
                    let t = t0 + n as f64;
                    (0..3)
                        .map(|k| {
                            Complex64::from_polar(
                                TONE_AMPS[k],
                                2.0 * PI * TONE_FREQS[k] * t + ph[k],
                            )
                        })
                        .sum()
                })
                .collect()
        }
        ModulationScheme::Wbfm => {
            let (t0, ph) = tone_phases(rng);
            (0..frame_len)
                .map(|n| {
                    let t = t0 + n as f64;
                    // Closed-form integral of the message.
                    let integral: f64 = (0..3)
                        .map(|k| {
                            TONE_AMPS[k] * (2.0 * PI * TONE_FREQS[k] * t + ph[k]).sin()
                                / (2.0 * PI * TONE_FREQS[k])
                        })
                        .sum();
                    Complex64::from_polar(1.0, 2.0 * PI * FM_DEVIATION * integral)
                })
                .collect()
        }
    };

    let power = mean_power(&signal);
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::NumericFailure(format!("{scheme} produced power {power}")));
    }
    let carrier = Complex64::from_polar(1.0 / power.sqrt(), rng.random::<f64>() * 2.0 * PI);
    signal.iter_mut().for_each(|s| *s *= carrier);
    Ok(signal)
}

pub fn mean_power(signal: &[Complex64]) -> f64 {
    signal.iter().map(|s| s.norm_sqr()).sum::<f64>() / signal.len() as f64
}

/// Gain, SNR and noise seed for one realization of `r = c·s + n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub gain: f64,
    pub snr_db: f64,
    pub rng_seed: u64,
}

impl ChannelModel {
    pub fn new(snr_db: f64, rng_seed: u64) -> Self {
        Self {
            gain: 1.0,
            snr_db,
            rng_seed,
        }
    }

    /// Total complex noise variance for a clean signal of power `signal_power`.
    pub fn noise_power(&self, signal_power: f64) -> f64 {
        signal_power / 10f64.powf(self.snr_db / 10.0)
    }
}

/// Scales `signal` by the channel gain and adds complex white Gaussian noise
/// whose variance is split equally between I and Q.
pub fn apply_channel(signal: &[Complex64], channel: &ChannelModel) -> Result<IqFrame> {
    if signal.is_empty() {
        return Err(Error::InvalidConfig("empty signal".into()));
    }
    if !channel.snr_db.is_finite() || !channel.gain.is_finite() {
        return Err(Error::NonFinite("channel model"));
    }
    if signal.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
        return Err(Error::NonFinite("channel input"));
    }
    let clean: Vec<Complex64> = signal.iter().map(|s| s * channel.gain).collect();
    let sigma = (channel.noise_power(mean_power(&clean)) / 2.0).sqrt();
    let mut rng = rng_from_seed(channel.rng_seed);
    let mut i = Vec::with_capacity(clean.len());
    let mut q = Vec::with_capacity(clean.len());
    for s in &clean {
        let ni: f64 = StandardNormal.sample(&mut rng);
        let nq: f64 = StandardNormal.sample(&mut rng);
        i.push((s.re + sigma * ni) as f32);
        q.push((s.im + sigma * nq) as f32);
    }
    IqFrame::new(i, q)
}

/// Grid of (scheme, SNR) cells to synthesize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub schemes: Vec<ModulationScheme>,
    pub snrs_db: Vec<i8>,
    pub frames_per_cell: usize,
    pub frame_len: usize,
    pub samples_per_symbol: usize,
    pub pulse: PulseShape,
    pub gain: f64,
    pub master_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            schemes: ModulationScheme::ALL.to_vec(),
            snrs_db: (-10..10).map(|k| (2 * k) as i8).collect(),
            frames_per_cell: 1000,
            frame_len: 128,
            samples_per_symbol: 8,
            pulse: PulseShape::Rectangular,
            gain: 1.0,
            master_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() || self.snrs_db.is_empty() {
            return Err(Error::InvalidConfig("no schemes or SNRs".into()));
        }
        if self.frames_per_cell == 0 {
            return Err(Error::InvalidConfig("frames_per_cell must be >= 1".into()));
        }
        if self.samples_per_symbol == 0 || self.frame_len < self.samples_per_symbol {
            return Err(Error::InvalidConfig(
                "frame_len must be >= samples_per_symbol >= 1".into(),
            ));
        }
        if self.frame_len > u16::MAX as usize {
            return Err(Error::InvalidConfig("frame_len exceeds 65535".into()));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.schemes.len() * self.snrs_db.len() * self.frames_per_cell
    }
}

/// Frames of one (scheme, SNR) cell. The cell's generator is derived from
/// the master seed and the cell coordinates only.
pub fn generate_cell(spec: &SynthSpec, scheme: ModulationScheme, snr_db: i8) -> Result<Vec<IqFrame>> {
    let mut rng = derive_rng(
        spec.master_seed,
        "sigsyn/cell",
        &[scheme.code() as i64, snr_db as i64],
    );
    (0..spec.frames_per_cell)
        .map(|_| {
            let clean = modulate(
                scheme,
                spec.frame_len,
                spec.samples_per_symbol,
                spec.pulse,
                &mut rng,
            )?;
            let channel = ChannelModel {
                gain: spec.gain,
                snr_db: snr_db as f64,
                rng_seed: rng.random(),
            };
            apply_channel(&clean, &channel)
        })
        .collect()
}

/// Generates every cell, scheme-major, in the order of `schemes` and `snrs_db`.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let total = spec.total_frames();
    let mut frames = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut snrs = Vec::with_capacity(total);
    for &scheme in &spec.schemes {
        for &snr in &spec.snrs_db {
            let cell = generate_cell(spec, scheme, snr)?;
            labels.extend(std::iter::repeat(scheme.code()).take(cell.len()));
            snrs.extend(std::iter::repeat(snr).take(cell.len()));
            frames.extend(cell);
        }
    }
    let splits = vec![SplitTag::Unassigned; frames.len()];
    Dataset::from_parts(frames, labels, snrs, splits, Provenance::Synthetic)
}
