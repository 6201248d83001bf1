//! Plain-text `key = value` configuration files.
//!
//! Blank lines and anything after `#` are ignored. Lists are comma
//! separated. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{ExperimentKind, ExperimentSpec, SolverKind};
use crate::dynamics::LabConfig;
use crate::error::{Error, Result};
use crate::problem::{Dims, RowMagnitudes, Snr};
use crate::solver::RecoveryConfig;

/// Parsed `key = value` pairs in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pairs: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1)))?;
            let key = k.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", lineno + 1)));
            }
            if pairs.iter().any(|(existing, _)| *existing == key) {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            pairs.push((key, v.trim().to_string()));
        }
        Ok(Self { pairs })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::InvalidConfig(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {v:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean {v:?} for {key}"))),
    }
}

/// `one`, `gaussian:MEAN,STD`, or a comma list of per-row values.
pub fn parse_magnitudes(v: &str) -> Result<RowMagnitudes> {
    let v = v.trim();
    if v.eq_ignore_ascii_case("one") || v.eq_ignore_ascii_case("ones") {
        return Ok(RowMagnitudes::ConstantOne);
    }
    if let Some(rest) = v.strip_prefix("gaussian:") {
        let p: Vec<f64> = parse_list("magnitudes", rest)?;
        if p.len() != 2 {
            return Err(Error::InvalidConfig("gaussian magnitudes need mean,std".into()));
        }
        return Ok(RowMagnitudes::Gaussian { mean: p[0], std: p[1] });
    }
    Ok(RowMagnitudes::Values(parse_list("magnitudes", v)?))
}

fn apply_dims(kv: &KeyValues, dims: &mut Dims) -> Result<()> {
    for (key, slot) in [("m", &mut dims.m), ("n", &mut dims.n), ("l", &mut dims.l), ("k", &mut dims.k)] {
        if let Some(v) = kv.get(key) {
            *slot = parse_value(key, v)?;
        }
    }
    Ok(())
}

const RECOVERY_KEYS: &[&str] = &[
    "alpha_g",
    "alpha_v",
    "eta",
    "eta_g",
    "eta_v",
    "max_iters",
    "record_every",
    "loss_tol",
    "rel_change_tol",
    "update_order",
];

/// Applies recovery keys. `alpha_v` defaults to the balanced value for `l`
/// whenever `alpha_g` is given without it.
pub fn apply_recovery(kv: &KeyValues, cfg: &mut RecoveryConfig, l: usize) -> Result<()> {
    if let Some(v) = kv.get("alpha_g") {
        *cfg = cfg.clone().with_alpha_g(parse_value("alpha_g", v)?, l);
    }
    if let Some(v) = kv.get("alpha_v") {
        cfg.alpha_v = parse_value("alpha_v", v)?;
    }
    if let Some(v) = kv.get("eta") {
        let eta: f64 = parse_value("eta", v)?;
        cfg.eta_g = eta;
        cfg.eta_v = eta;
    }
    if let Some(v) = kv.get("eta_g") {
        cfg.eta_g = parse_value("eta_g", v)?;
    }
    if let Some(v) = kv.get("eta_v") {
        cfg.eta_v = parse_value("eta_v", v)?;
    }
    if let Some(v) = kv.get("max_iters") {
        cfg.max_iters = parse_value("max_iters", v)?;
    }
    if let Some(v) = kv.get("record_every") {
        cfg.record_every = parse_value("record_every", v)?;
    }
    if let Some(v) = kv.get("loss_tol") {
        cfg.loss_tol = parse_value("loss_tol", v)?;
    }
    if let Some(v) = kv.get("rel_change_tol") {
        cfg.rel_change_tol = parse_value("rel_change_tol", v)?;
    }
    if let Some(v) = kv.get("update_order") {
        cfg.update_order = v.parse()?;
    }
    Ok(())
}

const SPEC_KEYS: &[&str] = &[
    "kind",
    "m",
    "n",
    "l",
    "k",
    "snr",
    "trials",
    "sweep",
    "solvers",
    "seed",
    "output",
    "magnitudes",
    "p",
    "record_timing",
    "balance_tol",
    "mnist_path",
    "mnist_count",
    "mnist_batch",
    "mnist_m",
    "mnist_k",
];

/// Builds an experiment spec: `kind` picks the defaults, then every other
/// key overrides them. `default_kind` is used when the file has no `kind`.
pub fn experiment_spec(kv: &KeyValues, default_kind: ExperimentKind) -> Result<ExperimentSpec> {
    // alpha_v is always the balanced value for the instance's L here
    let known: Vec<&str> = SPEC_KEYS
        .iter()
        .chain(RECOVERY_KEYS)
        .copied()
        .filter(|&k| k != "alpha_v")
        .collect();
    kv.reject_unknown(&known)?;
    let kind = match kv.get("kind") {
        Some(v) => v.parse()?,
        None => default_kind,
    };
    let mut spec = ExperimentSpec::new(kind);
    apply_dims(kv, &mut spec.dims)?;
    spec.recovery = spec.recovery.clone().with_alpha_g(spec.recovery.alpha_g, spec.dims.l);
    apply_recovery(kv, &mut spec.recovery, spec.dims.l)?;
    if let Some(v) = kv.get("snr") {
        spec.snr = v.parse::<Snr>()?;
    }
    if let Some(v) = kv.get("trials") {
        spec.trials = parse_value("trials", v)?;
    }
    if let Some(v) = kv.get("sweep") {
        spec.sweep_values = parse_list("sweep", v)?;
    }
    if let Some(v) = kv.get("solvers") {
        spec.solvers = parse_list::<SolverKind>("solvers", v)?;
    }
    if let Some(v) = kv.get("seed") {
        spec.seed = parse_value("seed", v)?;
    }
    if let Some(v) = kv.get("output") {
        spec.output_path = Some(PathBuf::from(v));
    }
    if let Some(v) = kv.get("magnitudes") {
        spec.magnitudes = parse_magnitudes(v)?;
    }
    if let Some(v) = kv.get("p") {
        spec.p = parse_value("p", v)?;
    }
    if let Some(v) = kv.get("record_timing") {
        spec.record_timing = parse_bool("record_timing", v)?;
    }
    if let Some(v) = kv.get("balance_tol") {
        spec.balance_tol = parse_value("balance_tol", v)?;
    }
    if let Some(v) = kv.get("mnist_path") {
        spec.mnist_path = Some(PathBuf::from(v));
    }
    for (key, slot) in [
        ("mnist_count", &mut spec.mnist_count),
        ("mnist_batch", &mut spec.mnist_batch),
        ("mnist_m", &mut spec.mnist_m),
        ("mnist_k", &mut spec.mnist_k),
    ] {
        if let Some(v) = kv.get(key) {
            *slot = parse_value(key, v)?;
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Recovery settings plus the instance to run them on.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoverSpec {
    pub dims: Dims,
    pub snr: Snr,
    pub magnitudes: RowMagnitudes,
    pub seed: u64,
    pub recovery: RecoveryConfig,
}

pub fn recover_spec(kv: &KeyValues) -> Result<RecoverSpec> {
    let known: Vec<&str> = ["m", "n", "l", "k", "snr", "magnitudes", "seed"]
        .iter()
        .chain(RECOVERY_KEYS)
        .copied()
        .collect();
    kv.reject_unknown(&known)?;
    let mut dims = Dims::default();
    apply_dims(kv, &mut dims)?;
    let mut recovery = RecoveryConfig::balanced(dims.l);
    apply_recovery(kv, &mut recovery, dims.l)?;
    recovery.validate()?;
    Ok(RecoverSpec {
        dims,
        snr: kv.get("snr").map(str::parse).transpose()?.unwrap_or(Snr::Db(40.0)),
        magnitudes: kv.get("magnitudes").map(parse_magnitudes).transpose()?.unwrap_or(RowMagnitudes::ConstantOne),
        seed: kv.get("seed").map(|v| parse_value("seed", v)).transpose()?.unwrap_or(0),
        recovery,
    })
}

pub fn lab_config(kv: &KeyValues) -> Result<LabConfig> {
    const KEYS: &[&str] = &[
        "m", "n", "l", "k", "magnitudes", "seed", "alpha_g", "step", "steps", "record_every", "tol", "unbalance",
        "rate_step", "rate_horizon", "rate_spacing", "rate_tol", "eps_app", "radius", "theorem_steps",
        "log_alpha_floor",
    ];
    kv.reject_unknown(KEYS)?;
    let mut cfg = LabConfig::default();
    apply_dims(kv, &mut cfg.dims)?;
    if let Some(v) = kv.get("magnitudes") {
        cfg.magnitudes = parse_magnitudes(v)?;
    }
    if let Some(v) = kv.get("seed") {
        cfg.seed = parse_value("seed", v)?;
    }
    for (key, slot) in [
        ("steps", &mut cfg.steps),
        ("record_every", &mut cfg.record_every),
        ("theorem_steps", &mut cfg.theorem_steps),
    ] {
        if let Some(v) = kv.get(key) {
            *slot = parse_value(key, v)?;
        }
    }
    for (key, slot) in [
        ("alpha_g", &mut cfg.alpha_g),
        ("step", &mut cfg.step),
        ("tol", &mut cfg.tol),
        ("unbalance", &mut cfg.unbalance),
        ("rate_step", &mut cfg.rate_step),
        ("rate_horizon", &mut cfg.rate_horizon),
        ("rate_spacing", &mut cfg.rate_spacing),
        ("rate_tol", &mut cfg.rate_tol),
        ("eps_app", &mut cfg.eps_app),
        ("radius", &mut cfg.radius),
        ("log_alpha_floor", &mut cfg.log_alpha_floor),
    ] {
        if let Some(v) = kv.get(key) {
            *slot = parse_value(key, v)?;
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let kv = KeyValues::parse("# header\nkind = error_vs_k\nsweep = 1, 2,3 # inline\n\nsolvers=momp,msp\n").unwrap();
        let spec = experiment_spec(&kv, ExperimentKind::Single).unwrap();
        assert_eq!(spec.kind, ExperimentKind::ErrorVsK);
        assert_eq!(spec.sweep_values, vec![1.0, 2.0, 3.0]);
        assert_eq!(spec.solvers, vec![SolverKind::Momp, SolverKind::Msp]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(KeyValues::parse("no equals sign").is_err());
        assert!(KeyValues::parse("a=1\na=2").is_err());
        let kv = KeyValues::parse("bogus = 1").unwrap();
        assert!(experiment_spec(&kv, ExperimentKind::Single).is_err());
        let kv = KeyValues::parse("trials = many").unwrap();
        assert!(experiment_spec(&kv, ExperimentKind::Single).is_err());
    }

    #[test]
    fn alpha_g_rederives_alpha_v() {
        let kv = KeyValues::parse("l = 8\nalpha_g = 0.4").unwrap();
        let spec = recover_spec(&kv).unwrap();
        assert_eq!(spec.recovery.alpha_v, 0.1);
        assert!(spec.recovery.is_balanced(8));
    }

    #[test]
    fn magnitudes_forms() {
        assert_eq!(parse_magnitudes("one").unwrap(), RowMagnitudes::ConstantOne);
        assert_eq!(
            parse_magnitudes("gaussian:1,0.1").unwrap(),
            RowMagnitudes::Gaussian { mean: 1.0, std: 0.1 }
        );
        assert_eq!(
            parse_magnitudes("1,2,3").unwrap(),
            RowMagnitudes::Values(vec![1.0, 2.0, 3.0])
        );
    }

    #[test]
    fn lab_overrides() {
        let kv = KeyValues::parse("steps = 10\nstep = 0.5\nsnr = 3").unwrap();
        assert!(lab_config(&kv).is_err());
        let kv = KeyValues::parse("steps = 10\nstep = 0.5").unwrap();
        let cfg = lab_config(&kv).unwrap();
        assert_eq!((cfg.steps, cfg.step), (10, 0.5));
    }
}
