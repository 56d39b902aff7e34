//! Synthetic brain phantoms with a known input-to-CBF mapping.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, ScanRecord, SessionKind};
use super::mask::{BrainMask, DEFAULT_THRESHOLD};
use super::mvol::save_volume;
use super::Volume;
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::networks::params::derive_seed;

pub const MIN_DIMS: [usize; 3] = [16, 16, 8];
/// Weights of the four ASL-like channels (4..8) in the CBF map.
pub const ASL_WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];
pub const CBF_UNIT: &str = "ml/100g/min";
const ASL_PLDS: [f64; 4] = [1.0, 1.5, 2.0, 2.5];

/// One phantom acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhantomScan {
    pub subject_seed: u64,
    pub label: ClassLabel,
    pub dims: [usize; 3],
    pub session: SessionKind,
    /// Distinguishes repeated sessions of the same kind.
    pub repeat: u32,
}

/// Smooth random field: a sum of three low-frequency plane waves.
struct Texture {
    waves: [([f64; 3], f64, f64); 3],
}

impl Texture {
    fn new<R: Rng>(rng: &mut R, amplitude: f64) -> Self {
        let mut wave = || {
            let f = [0, 1, 2].map(|_| rng.gen_range(-1.5..1.5) * PI);
            (f, rng.gen_range(0.0..2.0 * PI), amplitude * rng.gen_range(0.5..1.0))
        };
        Texture {
            waves: [wave(), wave(), wave()],
        }
    }

    fn at(&self, x: [f64; 3]) -> f64 {
        self.waves
            .iter()
            .map(|(f, phase, a)| a * (f[0] * x[0] + f[1] * x[1] + f[2] * x[2] + phase).sin())
            .sum()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Baseline phantom of one subject: `(input [8 ch], target [1 ch])`.
pub fn generate_phantom(seed: u64, label: ClassLabel, dims: [usize; 3]) -> Result<(Volume, Volume)> {
    generate_scan(&PhantomScan {
        subject_seed: seed,
        label,
        dims,
        session: SessionKind::Baseline,
        repeat: 0,
    })
}

pub fn generate_scan(scan: &PhantomScan) -> Result<(Volume, Volume)> {
    let dims = scan.dims;
    if dims.iter().zip(MIN_DIMS).any(|(&d, min)| d < min) {
        return Err(Error::InvalidArgument(format!("phantom dims {dims:?} below minimum {MIN_DIMS:?}")));
    }
    let input = generate_input(scan);
    let input = Volume::new(8, dims, input)?;
    let target = target_from_input(&input)?;
    Ok((input, target))
}

fn generate_input(scan: &PhantomScan) -> Vec<f32> {
    let [m, n, p] = scan.dims;
    let vox = m * n * p;
    let mut rng = ChaCha8Rng::seed_from_u64(scan.subject_seed);
    let radii = [0.82, 0.88, 0.78].map(|r: f64| r * rng.gen_range(0.96..1.04));
    let centre = [0, 1, 2].map(|_| rng.gen_range(-0.03..0.03));
    let anatomy: Vec<Texture> = (0..4).map(|_| Texture::new(&mut rng, 0.08)).collect();
    let perfusion_tex = Texture::new(&mut rng, 0.12);
    let att_tex = Texture::new(&mut rng, 0.1);
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    // Lateral territory on the deficit side.
    let wedge_centre = if side > 0.0 { 0.0 } else { PI } + rng.gen_range(-20f64..20.0).to_radians();
    let wedge_half = 55f64.to_radians();

    let session_stream = 1 + 2 * scan.repeat as u64 + (scan.session == SessionKind::PostAcetazolamide) as u64;
    let mut srng = ChaCha8Rng::seed_from_u64(derive_seed(scan.subject_seed, session_stream));
    let asl_noise: Vec<Texture> = (0..4).map(|_| Texture::new(&mut srng, 0.03)).collect();

    let mut out = vec![0.0f32; 8 * vox];
    for i in 0..m {
        for j in 0..n {
            for k in 0..p {
                let x = [
                    (i as f64 + 0.5) / m as f64 * 2.0 - 1.0 - centre[0],
                    (j as f64 + 0.5) / n as f64 * 2.0 - 1.0 - centre[1],
                    (k as f64 + 0.5) / p as f64 * 2.0 - 1.0 - centre[2],
                ];
                let e = [x[0] / radii[0], x[1] / radii[1], x[2] / radii[2]];
                let rho2 = e[0] * e[0] + e[1] * e[1] + e[2] * e[2];
                if rho2 > 1.0 {
                    continue;
                }
                let (flow, extra_att, lesion) = deficit(scan.label, e, side, wedge_centre, wedge_half);
                let ribbon = 1.0 + 0.4 * (-((1.0 - rho2.sqrt()) / 0.15).powi(2)).exp();
                let reserve = match scan.session {
                    SessionKind::Baseline => 1.0,
                    SessionKind::PostAcetazolamide => 1.0 + 0.3 * flow,
                };
                let perfusion = (1.0 + perfusion_tex.at(x)) * ribbon * flow * reserve;
                let att = 1.0 + att_tex.at(x) + extra_att;
                let v = (i * n + j) * p + k;
                out[v] = (600.0 * (0.8 + 0.2 * (1.0 - rho2)) * (1.0 + anatomy[0].at(x))) as f32;
                out[vox + v] = (300.0 * (1.0 + anatomy[1].at(x)) * (1.0 + 0.8 * lesion)) as f32;
                out[2 * vox + v] = (400.0 * (1.0 + anatomy[2].at(x)) * (1.0 + 0.5 * lesion)) as f32;
                out[3 * vox + v] = (1000.0 * att) as f32;
                for (c, pld) in ASL_PLDS.iter().enumerate() {
                    let arrived = sigmoid((pld - att) / 0.2);
                    out[(4 + c) * vox + v] = (100.0 * perfusion * arrived * (1.0 + asl_noise[c].at(x))) as f32;
                }
            }
        }
    }
    out
}

/// Perfusion multiplier, extra transit delay and lesion indicator at normalised position `e`.
fn deficit(label: ClassLabel, e: [f64; 3], side: f64, wedge_centre: f64, wedge_half: f64) -> (f64, f64, f64) {
    match label {
        ClassLabel::Hc => (1.0, 0.0, 0.0),
        ClassLabel::Mmd => {
            let anterior = sigmoid((e[1] - 0.1) / 0.05);
            (1.0 - 0.6 * anterior, 0.2 * anterior, 0.0)
        }
        ClassLabel::Icsd => {
            let hemi = sigmoid(side * e[0] / 0.2);
            (1.0 - 0.3 * hemi, 1.2 * hemi, 0.0)
        }
        ClassLabel::Stroke => {
            let angle = e[1].atan2(e[0]);
            let mut d = (angle - wedge_centre).abs() % (2.0 * PI);
            if d > PI {
                d = 2.0 * PI - d;
            }
            let radial = (e[0] * e[0] + e[1] * e[1]).sqrt();
            if d <= wedge_half && radial > 0.25 {
                (0.05, 0.0, 1.0)
            } else {
                (1.0, 0.0, 0.0)
            }
        }
    }
}

/// The CBF target implied by an 8-channel input: the weighted ASL sum, box-blurred
/// over 3x3x3 with zero padding, restricted to the brain mask of channel 0.
pub fn target_from_input(input: &Volume) -> Result<Volume> {
    if input.channels() != 8 {
        return Err(Error::Shape(format!("phantom input needs 8 channels, got {}", input.channels())));
    }
    let mask = BrainMask::from_threshold(input, DEFAULT_THRESHOLD)?;
    let [m, n, p] = input.dims();
    let vox = m * n * p;
    let mut sum = vec![0.0f64; vox];
    for (c, w) in ASL_WEIGHTS.iter().enumerate() {
        for (s, &x) in sum.iter_mut().zip(input.channel(4 + c)) {
            *s += w * x as f64;
        }
    }
    let blurred = box_blur3(&sum, [m, n, p]);
    let data = blurred
        .iter()
        .zip(mask.inside())
        .map(|(&v, &inside)| if inside { v as f32 } else { 0.0 })
        .collect();
    let mut target = input.like(1, data)?;
    target.set_unit(CBF_UNIT);
    Ok(target)
}

/// Separable 3-tap mean filter per axis with zero padding.
fn box_blur3(src: &[f64], dims: [usize; 3]) -> Vec<f64> {
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut cur = src.to_vec();
    for axis in 0..3 {
        let mut next = vec![0.0; cur.len()];
        let (len, stride) = (dims[axis], strides[axis]);
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = (idx / stride) % len;
            let mut acc = cur[idx];
            if pos > 0 {
                acc += cur[idx - stride];
            }
            if pos + 1 < len {
                acc += cur[idx + stride];
            }
            *out = acc / 3.0;
        }
        cur = next;
    }
    cur
}

/// Writes MVOL pairs and `manifest.json` for `subjects[c]` subjects of each class.
/// Every subject gets two or three sessions.
pub fn write_phantom_dataset(
    out_dir: impl AsRef<Path>,
    subjects: [usize; ClassLabel::COUNT],
    dims: [usize; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let scans = phantom_scans(subjects, dims, seed);
    let mut records = Vec::with_capacity(scans.len());
    for (id, index, scan) in scans {
        let (input, target) = generate_scan(&scan)?;
        let input_name = PathBuf::from(format!("{id}_s{index}_mri.mvol"));
        let target_name = PathBuf::from(format!("{id}_s{index}_pet.mvol"));
        save_volume(&input, out_dir.join(&input_name))?;
        save_volume(&target, out_dir.join(&target_name))?;
        records.push(ScanRecord {
            subject_id: id,
            session: scan.session,
            label: scan.label,
            input: input_name,
            target: target_name,
        });
    }
    let manifest = DatasetManifest::new(records)?;
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Scan plan of a phantom dataset: `(subject id, session index, scan)`.
pub fn phantom_scans(subjects: [usize; ClassLabel::COUNT], dims: [usize; 3], seed: u64) -> Vec<(String, usize, PhantomScan)> {
    let mut out = Vec::new();
    for (c, &count) in subjects.iter().enumerate() {
        let label = ClassLabel::ALL[c];
        for s in 0..count {
            let subject_seed = derive_seed(seed, (c * 100_000 + s) as u64);
            let sessions = 2 + (subject_seed % 2) as usize;
            let id = format!("{}-{s:03}", label.name().to_lowercase());
            for k in 0..sessions {
                let session = if k % 2 == 0 { SessionKind::Baseline } else { SessionKind::PostAcetazolamide };
                let scan = PhantomScan {
                    subject_seed,
                    label,
                    dims,
                    session,
                    repeat: (k / 2) as u32,
                };
                out.push((id.clone(), k, scan));
            }
        }
    }
    out
}
