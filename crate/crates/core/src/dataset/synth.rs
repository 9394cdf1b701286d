use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pitchyaw_to_vector, GazeVector};

use super::{Dataset, Geometry, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: u16,
    pub samples_per_subject: u32,
    /// Labels are uniform in `±pitch_range_deg × ±yaw_range_deg`.
    pub pitch_range_deg: f64,
    pub yaw_range_deg: f64,
    /// Standard deviation of additive pixel noise, in gray levels.
    pub noise: f64,
    /// Largest per-sample contrast loss of one eye, in `[0, 1)`.
    pub eye_contrast_jitter: f64,
    pub seed: u64,
    pub geometry: Geometry,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 6,
            samples_per_subject: 300,
            pitch_range_deg: 20.0,
            yaw_range_deg: 20.0,
            noise: 0.0,
            eye_contrast_jitter: 0.5,
            seed: 0,
            geometry: Geometry {
                face: (56, 56, 3),
                eye: (18, 30),
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.subjects == 0 {
            return fail("subjects must be at least 1".into());
        }
        if self.samples_per_subject == 0 {
            return fail("samples_per_subject must be at least 1".into());
        }
        if (self.subjects as u64) * (self.samples_per_subject as u64) > u32::MAX as u64 {
            return fail("sample count exceeds u32".into());
        }
        for (name, r) in [("pitch_range_deg", self.pitch_range_deg), ("yaw_range_deg", self.yaw_range_deg)] {
            if !(r > 0.0 && r <= 45.0) {
                return fail(format!("{name} {r} outside (0, 45]"));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise {} must be finite and non-negative", self.noise));
        }
        if !(0.0..1.0).contains(&self.eye_contrast_jitter) {
            return fail(format!("eye_contrast_jitter {} outside [0, 1)", self.eye_contrast_jitter));
        }
        let g = self.geometry;
        if g.face.0 < 16 || g.face.1 < 16 || g.eye.0 < 6 || g.eye.1 < 10 {
            return fail(format!("image geometry {g:?} too small to render"));
        }
        if g.face.2 != 1 && g.face.2 != 3 {
            return fail(format!("face channels must be 1 or 3, got {}", g.face.2));
        }
        Ok(())
    }
}

/// Per-subject look. Lengths are relative to the eye opening half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectAppearance {
    pub iris_radius: f64,
    /// Opening half-height over half-width.
    pub eyelid_aperture: f64,
    pub sclera: f64,
    pub iris: f64,
    pub skin: [f64; 3],
    pub brow: f64,
    pub texture: [f64; 3],
}

const APPEARANCE: u64 = 1;
const LABELS: u64 = 2;
const NUISANCE: u64 = 3;
const NOISE: u64 = 4;

fn stream(seed: u64, domain: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(id);
    rng
}

impl SubjectAppearance {
    pub fn derive(seed: u64, subject: u16) -> Self {
        let mut rng = stream(seed, APPEARANCE, subject as u64);
        let tone: f64 = rng.gen_range(0.55..1.0);
        SubjectAppearance {
            iris_radius: rng.gen_range(0.28..0.4),
            eyelid_aperture: rng.gen_range(0.42..0.58),
            sclera: rng.gen_range(195.0..245.0),
            iris: rng.gen_range(35.0..110.0),
            skin: [230.0 * tone, 185.0 * tone, 150.0 * tone],
            brow: rng.gen_range(0.04..0.09),
            texture: [rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.0..std::f64::consts::TAU)],
        }
    }

    fn skin_gray(&self) -> f64 {
        0.299 * self.skin[0] + 0.587 * self.skin[1] + 0.114 * self.skin[2]
    }
}

/// Area coverage of a shape by a unit pixel, from a signed distance in pixels.
fn coverage(sd: f64) -> f64 {
    (0.5 - sd).clamp(0.0, 1.0)
}

fn ellipse_sd(dx: f64, dy: f64, a: f64, b: f64) -> f64 {
    ((dx / a).hypot(dy / b) - 1.0) * a.min(b)
}

/// An eye opening centered at `(cx, cy)` with half-width `a`.
struct EyeFrame {
    cx: f64,
    cy: f64,
    a: f64,
}

/// Gray level and opening coverage of the eye at pixel center `(x, y)`.
fn eye_pixel(app: &SubjectAppearance, gaze: GazeVector, frame: &EyeFrame, x: f64, y: f64) -> (f64, f64) {
    let (dx, dy) = (x - frame.cx, y - frame.cy);
    let b = app.eyelid_aperture * frame.a;
    let open = coverage(ellipse_sd(dx, dy, frame.a, b));
    // the iris slides with the gaze's image-plane components
    let (ix, iy) = (0.8 * frame.a * gaze.x, 0.8 * frame.a * gaze.y);
    let r = app.iris_radius * frame.a;
    let d = (dx - ix).hypot(dy - iy);
    let iris = coverage(d - r);
    let pupil = coverage(d - 0.45 * r);
    let inner = app.iris * (1.0 - pupil) + 12.0 * pupil;
    (app.sclera * (1.0 - iris) + inner * iris, open)
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn render_eye(app: &SubjectAppearance, gaze: GazeVector, contrast: f64, (h, w): (usize, usize)) -> Vec<f64> {
    let frame = EyeFrame {
        cx: w as f64 / 2.0,
        cy: h as f64 / 2.0,
        a: 0.42 * w as f64,
    };
    let skin = app.skin_gray();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (eye, open) = eye_pixel(app, gaze, &frame, x as f64 + 0.5, y as f64 + 0.5);
            let v = skin * (1.0 - open) + eye * open;
            out.push(128.0 + contrast * (v - 128.0));
        }
    }
    out
}

fn render_face(app: &SubjectAppearance, gaze: GazeVector, contrast: [f64; 2], (h, w, c): (usize, usize, usize)) -> Vec<f64> {
    let (hf, wf) = (h as f64, w as f64);
    let eyes = [
        (EyeFrame { cx: 0.68 * wf, cy: 0.42 * hf, a: 0.1 * wf }, contrast[0]),
        (EyeFrame { cx: 0.32 * wf, cy: 0.42 * hf, a: 0.1 * wf }, contrast[1]),
    ];
    let [fx, fy, phase] = app.texture;
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let head = coverage(ellipse_sd(px - 0.5 * wf, py - 0.52 * hf, 0.4 * wf, 0.47 * hf));
            let tex = 1.0 + 0.08 * (fx * px + fy * py + phase).sin();
            let mut rgb = [0.0; 3];
            for (k, v) in rgb.iter_mut().enumerate() {
                let bg = 60.0 + 30.0 * py / hf;
                *v = bg * (1.0 - head) + app.skin[k] * tex * head;
            }
            // brows, nose shadow and mouth darken the skin
            let mut shade: f64 = 0.0;
            for (frame, _) in &eyes {
                let by = frame.cy - 1.1 * frame.a;
                shade = shade.max(coverage(ellipse_sd(px - frame.cx, py - by, 1.1 * frame.a, app.brow * hf)) * 0.6);
            }
            shade = shade.max(coverage(ellipse_sd(px - 0.5 * wf, py - 0.58 * hf, 0.03 * wf, 0.1 * hf)) * 0.25);
            shade = shade.max(coverage(ellipse_sd(px - 0.5 * wf, py - 0.76 * hf, 0.14 * wf, 0.035 * hf)) * 0.55);
            for v in rgb.iter_mut() {
                *v *= 1.0 - shade;
            }
            for (frame, k) in &eyes {
                let (eye, open) = eye_pixel(app, gaze, frame, px, py);
                if open > 0.0 {
                    let eye = 128.0 + k * (eye - 128.0);
                    for v in rgb.iter_mut() {
                        *v = *v * (1.0 - open) + eye * open;
                    }
                }
            }
            if c == 1 {
                out.push(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
            } else {
                out.extend_from_slice(&rgb);
            }
        }
    }
    out
}

/// Per-sample contrast of the two eyes: one randomly chosen eye keeps full
/// contrast, the other loses up to `jitter` of it.
fn eye_contrast(cfg: &SynthConfig, subject: u16, sample_id: u32) -> [f64; 2] {
    let mut rng = stream(cfg.seed, NUISANCE, ((subject as u64) << 32) | sample_id as u64);
    let dim = 1.0 - rng.gen_range(0.0..=cfg.eye_contrast_jitter);
    if rng.gen::<bool>() {
        [dim, 1.0]
    } else {
        [1.0, dim]
    }
}

/// Renders the noise-free images of one sample; `gaze` is used as given.
pub fn render_sample(cfg: &SynthConfig, subject: u16, sample_id: u32, gaze: GazeVector) -> SampleRecord {
    let app = SubjectAppearance::derive(cfg.seed, subject);
    let k = eye_contrast(cfg, subject, sample_id);
    let g = cfg.geometry;
    let q = |v: Vec<f64>| v.into_iter().map(quantize).collect();
    SampleRecord {
        subject_id: subject,
        sample_id,
        gaze: gaze.to_array().map(|v| v as f32),
        face: q(render_face(&app, gaze, k, g.face)),
        left_eye: q(render_eye(&app, gaze, k[0], g.eye)),
        right_eye: q(render_eye(&app, gaze, k[1], g.eye)),
    }
}

fn add_noise(cfg: &SynthConfig, rec: &mut SampleRecord) {
    if cfg.noise == 0.0 {
        return;
    }
    let mut rng = stream(cfg.seed, NOISE, ((rec.subject_id as u64) << 32) | rec.sample_id as u64);
    let normal = Normal::new(0.0, cfg.noise).expect("validated noise level");
    for buf in [&mut rec.face, &mut rec.left_eye, &mut rec.right_eye] {
        for p in buf.iter_mut() {
            *p = quantize(*p as f64 + normal.sample(&mut rng));
        }
    }
}

fn subject_records(cfg: &SynthConfig, subject: u16) -> Result<Vec<SampleRecord>> {
    let mut rng = stream(cfg.seed, LABELS, subject as u64);
    let (pr, yr) = (cfg.pitch_range_deg.to_radians(), cfg.yaw_range_deg.to_radians());
    (0..cfg.samples_per_subject)
        .map(|i| {
            let pitch = rng.gen_range(-pr..=pr);
            let yaw = rng.gen_range(-yr..=yr);
            // render from the stored f32 label so a record can be re-rendered
            let stored = pitchyaw_to_vector(pitch, yaw)?.to_array().map(|v| v as f32);
            let gaze = GazeVector::new(stored[0] as f64, stored[1] as f64, stored[2] as f64);
            let sample_id = subject as u32 * cfg.samples_per_subject + i;
            let mut rec = render_sample(cfg, subject, sample_id, gaze);
            add_noise(cfg, &mut rec);
            Ok(rec)
        })
        .collect()
}

/// Generates `subjects × samples_per_subject` records, subjects in
/// parallel; output depends only on the config.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let parts: Vec<Result<Vec<SampleRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.subjects)
            .map(|subject| s.spawn(move || subject_records(cfg, subject)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("renderer thread panicked")).collect()
    });
    let mut ds = Dataset::new(cfg.geometry);
    for part in parts {
        for rec in part? {
            ds.push(rec)?;
        }
    }
    Ok(ds)
}

/// Generates and writes a dataset, returning it.
pub fn write_synth(cfg: &SynthConfig, path: impl AsRef<Path>) -> Result<Dataset> {
    let ds = synth_generate(cfg)?;
    ds.save(path)?;
    Ok(ds)
}
