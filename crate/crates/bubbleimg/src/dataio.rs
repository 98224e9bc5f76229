//! Scenarios, synthetic backscattering data, noise and file round trips.

use crate::error::{Error, Result};
use crate::fields::solve_background;
use crate::forward::{
    body_wave_resonance, farfield_regime1, farfield_regime2, improved_w_integral, minnaert_frequency, ResonanceInfo, ResonanceSource,
    ShapeFactors,
};
use crate::geometry::{load_shape, voxelize, Shape};
use crate::media::{
    check_band, contrasts_from, BackgroundMedium, BandTarget, BubbleSpec, FrequencyBand, GaussianBump, Grid3,
    MinnaertConstant, Regime, ScanGrid,
};
use crate::numerics::vec3::{dot, norm, scale};
use crate::oracle::SphereScatterer;
use crate::spectrum::{assemble_newtonian, newtonian_eigens, WSolver};
use crate::{Vec3, C64, FARFIELD_NORMALIZATION};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

/// Schema version written to every sidecar.
pub const SCHEMA_VERSION: u32 = 1;

pub const BASELINE_FILE: &str = "baseline.csv";
pub const BUBBLED_FILE: &str = "bubbled.csv";
pub const META_FILE: &str = "meta.json";

const BASELINE_HEADER: [&str; 3] = ["omega", "re_v_inf", "im_v_inf"];
const BUBBLED_HEADER: [&str; 6] = ["z_x", "z_y", "z_z", "omega", "re_u", "im_u"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phantom {
    Gaussian {
        center: Vec3,
        width: f64,
        delta_rho: f64,
        delta_k: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    #[serde(rename = "box")]
    pub bounds: [Vec3; 2],
    pub h: f64,
    pub exterior_rho: f64,
    pub exterior_k: f64,
    #[serde(default)]
    pub phantoms: Vec<Phantom>,
}

impl MediumSpec {
    pub fn build(&self) -> Result<BackgroundMedium> {
        let grid = Grid3::from_box(self.bounds[0], self.bounds[1], self.h)?;
        let bumps: Vec<GaussianBump> = self
            .phantoms
            .iter()
            .map(|p| match *p {
                Phantom::Gaussian {
                    center,
                    width,
                    delta_rho,
                    delta_k,
                } => GaussianBump {
                    center,
                    width,
                    delta_rho,
                    delta_k,
                },
            })
            .collect();
        BackgroundMedium::from_phantoms(grid, self.exterior_rho, self.exterior_k, &bumps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub theta: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Regime1,
    Regime2,
    OracleSphere,
}

impl Generator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Generator::Regime1 => "regime1",
            Generator::Regime2 => "regime2",
            Generator::OracleSphere => "oracle_sphere",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub delta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime2Form {
    #[default]
    Standard,
    Improved,
}

fn default_quad_order() -> usize {
    3
}
fn default_body_h() -> f64 {
    0.125
}
fn default_pole_skip() -> f64 {
    0.02
}

/// Generator knobs; every field has a default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOptions {
    /// Surface quadrature order for `μ_∂B` on meshes.
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    /// Voxel size on the unit shape for the Newtonian spectrum.
    #[serde(default = "default_body_h")]
    pub body_h: f64,
    /// Index of the body-wave cluster, largest eigenvalue first.
    #[serde(default)]
    pub cluster: usize,
    #[serde(default)]
    pub regime2_form: Regime2Form,
    /// Samples with `|ω²/ω²_res − 1|` below this are skipped and listed.
    #[serde(default = "default_pole_skip")]
    pub pole_skip: f64,
    /// Do not enforce `ρ₀(z) < ρ̄₁` for Minnaert bubbles.
    #[serde(default)]
    pub allow_dense_background: bool,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        GeneratorOptions {
            quad_order: default_quad_order(),
            body_h: default_body_h(),
            cluster: 0,
            regime2_form: Regime2Form::Standard,
            pole_skip: default_pole_skip(),
            allow_dense_background: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub medium: MediumSpec,
    pub bubble: BubbleSpec,
    pub scan: ScanGrid,
    pub band: FrequencyBand,
    pub incident: Incident,
    pub generator: Generator,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub options: GeneratorOptions,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            version: SCHEMA_VERSION,
            msg: format!("scenario: {e}"),
        })
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Scenario::from_json(&fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serialises");
        hex(&Sha256::digest(&bytes))
    }

    pub fn theta(&self) -> Result<Vec3> {
        let n = norm(self.incident.theta);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("incident direction must be a nonzero vector".into()));
        }
        Ok(scale(self.incident.theta, 1.0 / n))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub omega: f64,
    pub v: C64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbledRecord {
    pub z: Vec3,
    pub omega: f64,
    pub u: C64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub z: Vec3,
    pub omega: f64,
}

/// Self-describing sidecar of a measurement set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub version: u32,
    pub scenario_hash: String,
    pub theta: Vec3,
    pub eps: f64,
    pub rho_bar: f64,
    pub k_bar: f64,
    pub regime: Regime,
    pub j: Option<f64>,
    pub shape: String,
    pub mu_shape: f64,
    /// `|B|` of the unit shape.
    pub volume: f64,
    /// `m²_{n₀}` of the body-wave cluster, when one was used.
    #[serde(default)]
    pub moment_sq: Option<f64>,
    pub exterior_rho: f64,
    pub exterior_k: f64,
    pub generator: Generator,
    pub noise: NoiseSpec,
    pub farfield_normalization: String,
    pub band: FrequencyBand,
    pub scan: ScanGrid,
    pub skipped: Vec<SkippedSample>,
    pub warnings: Vec<String>,
}

impl Meta {
    pub fn exterior_kappa(&self, omega: f64) -> f64 {
        omega * (self.exterior_rho / self.exterior_k).sqrt()
    }

    /// The bubble as described by the sidecar, centred at `z`.
    pub fn bubble_at(&self, z: Vec3) -> Result<BubbleSpec> {
        Ok(BubbleSpec {
            shape: self.shape.parse()?,
            center: z,
            eps: self.eps,
            rho_bar: self.rho_bar,
            k_bar: self.k_bar,
            regime: self.regime,
            j: self.j,
        })
    }
}

/// Backscattering records `x̂ = −θ` for one incident direction.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub meta: Meta,
    pub baseline: Vec<BaselineRecord>,
    pub bubbled: Vec<BubbledRecord>,
}

impl MeasurementSet {
    /// Every `(z, ω)` at most once, every bubbled `ω` in the baseline.
    pub fn validate(&self) -> Result<()> {
        let mut omegas = HashSet::new();
        for b in &self.baseline {
            if !omegas.insert(b.omega.to_bits()) {
                return Err(Error::Data(format!("duplicate baseline frequency {}", b.omega)));
            }
        }
        let mut seen = HashSet::new();
        for r in &self.bubbled {
            let key = (r.z.map(f64::to_bits), r.omega.to_bits());
            if !seen.insert(key) {
                return Err(Error::Data(format!("duplicate record at z={:?}, ω={}", r.z, r.omega)));
            }
            if !omegas.contains(&r.omega.to_bits()) {
                return Err(Error::Data(format!("frequency {} has no baseline record", r.omega)));
            }
        }
        Ok(())
    }

    pub fn baseline_at(&self, omega: f64) -> Option<C64> {
        self.baseline.iter().find(|b| b.omega == omega).map(|b| b.v)
    }

    /// Distinct scan points in order of first appearance.
    pub fn points(&self) -> Vec<Vec3> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.bubbled {
            if seen.insert(r.z.map(f64::to_bits)) {
                out.push(r.z);
            }
        }
        out
    }

    /// Records grouped by scan point, frequencies ascending.
    pub fn by_point(&self) -> BTreeMap<[u64; 3], Vec<BubbledRecord>> {
        let mut map: BTreeMap<[u64; 3], Vec<BubbledRecord>> = BTreeMap::new();
        for r in &self.bubbled {
            map.entry(r.z.map(f64::to_bits)).or_default().push(*r);
        }
        for v in map.values_mut() {
            v.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        }
        map
    }
}

/// Shape factors and the resonance source for one bubble.
struct BubbleModel {
    shape: Shape,
    factors: ShapeFactors,
    body: Option<(ResonanceInfo, Option<WSolver>)>,
}

fn bubble_model(sc: &Scenario) -> Result<BubbleModel> {
    let shape = load_shape(&sc.bubble.shape)?;
    let factors = ShapeFactors::of(&shape, sc.options.quad_order)?;
    let body = if sc.bubble.regime == Regime::BodyWave && sc.generator == Generator::Regime2 {
        let vox = voxelize(&shape, sc.options.body_h)?;
        let disc = assemble_newtonian(&vox)?;
        let clusters = newtonian_eigens(&disc, sc.options.cluster + 1)?;
        let cluster = clusters
            .get(sc.options.cluster)
            .ok_or_else(|| Error::Domain(format!("cluster {} is not available", sc.options.cluster)))?;
        let res = body_wave_resonance(&sc.bubble, cluster)?;
        let solver = match sc.options.regime2_form {
            Regime2Form::Standard => None,
            Regime2Form::Improved => Some(WSolver::new(&disc)?),
        };
        Some((res, solver))
    } else {
        None
    };
    Ok(BubbleModel { shape, factors, body })
}

fn near_pole(omega: f64, res: &ResonanceInfo, skip: f64) -> bool {
    ((omega * omega) / res.omega2() - 1.0).abs() < skip
}

/// Synthesize the noiseless measurement set of a scenario.
pub fn synthesize_scan(sc: &Scenario) -> Result<MeasurementSet> {
    let theta = sc.theta()?;
    sc.band.validate()?;
    let medium = sc.medium.build()?;
    sc.scan.validate(medium.grid())?;
    let no_bubble = sc.bubble.eps == 0.0;
    if !no_bubble {
        sc.bubble.validate()?;
    }
    match (sc.generator, sc.bubble.regime) {
        (Generator::Regime1, Regime::Minnaert) | (Generator::Regime2, Regime::BodyWave) | (Generator::OracleSphere, _) => {}
        (g, r) => {
            return Err(Error::Precondition(format!(
                "generator {} does not model {} bubbles",
                g.as_str(),
                r.as_str()
            )))
        }
    }
    if sc.generator == Generator::OracleSphere && !medium.is_homogeneous() {
        return Err(Error::Precondition("the sphere oracle needs a homogeneous background".into()));
    }
    let model = bubble_model(sc)?;
    if sc.generator == Generator::OracleSphere && !matches!(model.shape, Shape::Ball) {
        return Err(Error::Precondition("the sphere oracle needs the ball shape".into()));
    }

    let mut warnings = Vec::new();
    let target = match &model.body {
        Some((res, _)) => BandTarget::BodyWave { omega: res.omega },
        None => BandTarget::Minnaert {
            mu_shape: model.factors.mu,
            constant: MinnaertConstant::EightPi,
        },
    };
    if !no_bubble && (sc.bubble.regime == Regime::Minnaert || model.body.is_some()) {
        let report = check_band(&medium, &sc.band, &sc.bubble, target);
        if !report.bracketed {
            warnings.push(format!(
                "band [{}, {}] does not bracket the resonances [{}, {}]",
                sc.band.omega_min, sc.band.omega_max, report.required_min, report.required_max
            ));
        }
    }

    let omegas = sc.band.omegas();
    let points = sc.scan.points();
    let rho_ext = medium.exterior_rho();
    let backdir = scale(theta, -1.0);

    // One background solve per frequency: v^∞(−θ, θ) and v(z, θ) on the scan.
    let background: Vec<(C64, Vec<C64>)> = omegas
        .par_iter()
        .map(|&w| -> Result<(C64, Vec<C64>)> {
            let (field, far) = solve_background(&medium, theta, w)?;
            let vz = points
                .iter()
                .map(|z| {
                    field
                        .sample(*z)
                        .ok_or_else(|| Error::Domain(format!("scan point {z:?} outside the field grid")))
                })
                .collect::<Result<Vec<C64>>>()?;
            Ok((far.eval(backdir), vz))
        })
        .collect::<Result<Vec<_>>>()?;

    // Per-point resonance data.
    let local: Vec<(f64, f64)> = points.iter().map(|z| medium.sample(*z)).collect::<Result<_>>()?;
    let minnaert: Vec<Option<ResonanceInfo>> = if !no_bubble && sc.bubble.regime == Regime::Minnaert {
        local
            .iter()
            .map(|(rho, _)| minnaert_frequency(&sc.bubble, *rho, &model.factors, sc.options.allow_dense_background).map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; points.len()]
    };

    let pairs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..omegas.len()).map(move |i| (p, i))).collect();
    let records: Vec<Option<BubbledRecord>> = pairs
        .par_iter()
        .map(|&(p, i)| -> Result<Option<BubbledRecord>> {
            let (z, w) = (points[p], omegas[i]);
            let (v_inf, ref vz) = background[i];
            let v = vz[p];
            let bubble = sc.bubble.at(z);
            let u = if no_bubble {
                v_inf
            } else {
                match sc.generator {
                    Generator::Regime1 => {
                        let res = minnaert[p].as_ref().expect("Minnaert resonance");
                        if near_pole(w, res, sc.options.pole_skip) {
                            return Ok(None);
                        }
                        farfield_regime1(v_inf, w, &bubble, res, rho_ext, v, v)?
                    }
                    Generator::Regime2 => {
                        let (res, solver) = model.body.as_ref().expect("body-wave resonance");
                        if near_pole(w, res, sc.options.pole_skip) {
                            return Ok(None);
                        }
                        let iw = match solver {
                            Some(s) => {
                                let c = contrasts_from(&bubble, local[p].0, local[p].1);
                                Some(improved_w_integral(s, c.gamma, local[p].0, w, bubble.eps)?)
                            }
                            None => None,
                        };
                        farfield_regime2(v_inf, w, &bubble, res, rho_ext, v, v, iw)?
                    }
                    Generator::OracleSphere => {
                        let sph = SphereScatterer::from_bubble(&bubble, rho_ext, medium.exterior_k());
                        let kappa = medium.exterior_kappa(w);
                        // Translating the sphere to z multiplies by e^{iκ(θ − x̂)·z}.
                        let shift = C64::from_polar(1.0, 2.0 * kappa * dot(theta, z));
                        v_inf + sph.farfield(w, theta, backdir)? * shift
                    }
                }
            };
            Ok(Some(BubbledRecord { z, omega: w, u }))
        })
        .collect::<Result<_>>()?;

    let mut bubbled = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for (&(p, i), r) in pairs.iter().zip(records) {
        match r {
            Some(r) => bubbled.push(r),
            None => skipped.push(SkippedSample {
                z: points[p],
                omega: omegas[i],
            }),
        }
    }
    let baseline = omegas
        .iter()
        .zip(&background)
        .map(|(&omega, (v, _))| BaselineRecord { omega, v: *v })
        .collect();
    let meta = Meta {
        version: SCHEMA_VERSION,
        scenario_hash: sc.hash(),
        theta,
        eps: sc.bubble.eps,
        rho_bar: sc.bubble.rho_bar,
        k_bar: sc.bubble.k_bar,
        regime: sc.bubble.regime,
        j: sc.bubble.j,
        shape: sc.bubble.shape.to_string(),
        mu_shape: model.factors.mu,
        volume: model.factors.volume,
        moment_sq: model.body.as_ref().and_then(|(res, _)| match res.source {
            ResonanceSource::BodyWave { moment_sq, .. } => Some(moment_sq),
            _ => None,
        }),
        exterior_rho: rho_ext,
        exterior_k: medium.exterior_k(),
        generator: sc.generator,
        noise: NoiseSpec::default(),
        farfield_normalization: FARFIELD_NORMALIZATION.to_string(),
        band: sc.band,
        scan: sc.scan.clone(),
        skipped,
        warnings,
    };
    Ok(MeasurementSet { meta, baseline, bubbled })
}

/// Unit complex Gaussian `(g₁ + i g₂)/√2` keyed by `(seed, z, ω)`.
/// Baseline records use `z = None`.
pub fn noise_sample(seed: u64, z: Option<Vec3>, omega: f64) -> C64 {
    let mut h = Sha256::new();
    h.update(b"bubbleimg-noise");
    h.update(seed.to_le_bytes());
    match z {
        Some(z) => {
            h.update([1u8]);
            for c in z {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        None => h.update([0u8]),
    }
    h.update(omega.to_bits().to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(key);
    let g1: f64 = StandardNormal.sample(&mut rng);
    let g2: f64 = StandardNormal.sample(&mut rng);
    C64::new(g1, g2) / 2f64.sqrt()
}

/// Root mean square of `|r|` over baseline and bubbled records.
pub fn record_rms(set: &MeasurementSet) -> f64 {
    let n = set.baseline.len() + set.bubbled.len();
    if n == 0 {
        return 0.0;
    }
    let s: f64 = set.baseline.iter().map(|b| b.v.norm_sqr()).sum::<f64>()
        + set.bubbled.iter().map(|r| r.u.norm_sqr()).sum::<f64>();
    (s / n as f64).sqrt()
}

/// `r ← r + δ·rms(|records|)·(g₁+ig₂)/√2` on every record.
pub fn add_noise(set: &MeasurementSet, delta: f64, seed: u64) -> Result<MeasurementSet> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("noise level must be finite and non-negative, got {delta}")));
    }
    let mut out = set.clone();
    out.meta.noise = NoiseSpec { delta, seed };
    if delta == 0.0 {
        return Ok(out);
    }
    let sigma = delta * record_rms(set);
    for b in out.baseline.iter_mut() {
        b.v += noise_sample(seed, None, b.omega) * sigma;
    }
    for r in out.bubbled.iter_mut() {
        r.u += noise_sample(seed, Some(r.z), r.omega) * sigma;
    }
    Ok(out)
}

/// Synthesize and apply the scenario's noise.
pub fn simulate(sc: &Scenario) -> Result<MeasurementSet> {
    add_noise(&synthesize_scan(sc)?, sc.noise.delta, sc.noise.seed)
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_err(msg: String) -> Error {
    Error::Parse {
        version: SCHEMA_VERSION,
        msg,
    }
}

fn csv_err(file: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| parse_err(format!("{file}: {e}"))
}

pub fn write_set(set: &MeasurementSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(BASELINE_FILE)).map_err(csv_err(BASELINE_FILE))?;
    w.write_record(BASELINE_HEADER).map_err(csv_err(BASELINE_FILE))?;
    for b in &set.baseline {
        w.write_record([fmt_f64(b.omega), fmt_f64(b.v.re), fmt_f64(b.v.im)])
            .map_err(csv_err(BASELINE_FILE))?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(BUBBLED_FILE)).map_err(csv_err(BUBBLED_FILE))?;
    w.write_record(BUBBLED_HEADER).map_err(csv_err(BUBBLED_FILE))?;
    for r in &set.bubbled {
        w.write_record([
            fmt_f64(r.z[0]),
            fmt_f64(r.z[1]),
            fmt_f64(r.z[2]),
            fmt_f64(r.omega),
            fmt_f64(r.u.re),
            fmt_f64(r.u.im),
        ])
        .map_err(csv_err(BUBBLED_FILE))?;
    }
    w.flush()?;
    let mut meta = serde_json::to_string_pretty(&set.meta).map_err(|e| parse_err(e.to_string()))?;
    meta.push('\n');
    fs::write(dir.join(META_FILE), meta)?;
    Ok(())
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let file = path.file_name().and_then(|s| s.to_str()).unwrap_or("csv").to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(format!("{file}: {e}")))?;
    let got: Vec<String> = r
        .headers()
        .map_err(|e| parse_err(format!("{file}: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if got != header {
        return Err(parse_err(format!("{file}: expected header {header:?}, found {got:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(format!("{file}: {e}")))?;
        let vals = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("{file} row {}: {s:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    Ok(rows)
}

pub fn read_set(dir: &Path) -> Result<MeasurementSet> {
    let text = fs::read_to_string(dir.join(META_FILE))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_err(format!("{META_FILE}: {e}")))?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != SCHEMA_VERSION {
        return Err(Error::Parse {
            version,
            msg: format!("unsupported schema version {version}, expected {SCHEMA_VERSION}"),
        });
    }
    let meta: Meta = serde_json::from_value(raw).map_err(|e| parse_err(format!("{META_FILE}: {e}")))?;
    let baseline = read_rows(&dir.join(BASELINE_FILE), &BASELINE_HEADER)?
        .into_iter()
        .map(|r| BaselineRecord {
            omega: r[0],
            v: C64::new(r[1], r[2]),
        })
        .collect();
    let bubbled = read_rows(&dir.join(BUBBLED_FILE), &BUBBLED_HEADER)?
        .into_iter()
        .map(|r| BubbledRecord {
            z: [r[0], r[1], r[2]],
            omega: r[3],
            u: C64::new(r[4], r[5]),
        })
        .collect();
    let set = MeasurementSet { meta, baseline, bubbled };
    set.validate()?;
    Ok(set)
}

/// `ρ̄₀/4π`, the far-field constant attached to every bubble term.
pub fn farfield_constant(meta: &Meta) -> f64 {
    meta.exterior_rho / (4.0 * PI)
}
