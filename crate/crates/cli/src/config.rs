use lyapunov_frames::dynamics::{builtin_field, default_initial_point, PolynomialField, PolynomialSpec, SharedField};
use lyapunov_frames::frame::FrameOptions;
use lyapunov_frames::perturbation::SearchConfig;
use lyapunov_frames::SolverConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    /// JSON pointer to the offending value.
    pub pointer: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{p}: {}", self.message)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldRef {
    Name(String),
    Inline(PolynomialSpec),
}

impl FieldRef {
    pub fn build(&self) -> lyapunov_frames::Result<SharedField<f64>> {
        match self {
            FieldRef::Name(n) => builtin_field(n),
            FieldRef::Inline(spec) => Ok(Arc::new(PolynomialField::from_spec(spec)?)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            FieldRef::Name(n) => n.clone(),
            FieldRef::Inline(spec) => spec.name.clone().unwrap_or_else(|| "inline".into()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LMode {
    Auto {
        #[serde(default)]
        epsilon_zero: Option<f64>,
    },
    /// One-based indices into the descending spectrum.
    Explicit { indices: Vec<usize> },
}

impl Default for LMode {
    fn default() -> Self {
        LMode::Auto { epsilon_zero: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbDef {
    Constant {
        #[serde(default)]
        a: Option<Vec<f64>>,
        #[serde(default)]
        bound: Option<f64>,
    },
    Sinusoid {
        #[serde(default)]
        amplitude: Option<Vec<f64>>,
        #[serde(default)]
        frequency: Option<Vec<f64>>,
        #[serde(default)]
        phase: Option<Vec<f64>>,
        #[serde(default)]
        bound: Option<f64>,
    },
    Saturating {
        #[serde(default)]
        b: Option<Vec<f64>>,
        #[serde(default = "one")]
        gain: f64,
        #[serde(default)]
        bound: Option<f64>,
    },
    FieldDifference {
        field: FieldRef,
        #[serde(default = "one")]
        radius: f64,
    },
}

impl PerturbDef {
    pub fn kind(&self) -> &'static str {
        match self {
            PerturbDef::Constant { .. } => "constant",
            PerturbDef::Sinusoid { .. } => "sinusoid",
            PerturbDef::Saturating { .. } => "saturating",
            PerturbDef::FieldDifference { .. } => "field_difference",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn minus_one() -> i8 {
    -1
}

fn four() -> usize {
    4
}

fn eta() -> f64 {
    0.05
}

fn ten() -> u32 {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Spectrum {},
    Reduced {
        /// Write every `tape_stride`-th tape sample to CSV.
        #[serde(default)]
        tape_stride: Option<usize>,
    },
    Perturb {
        perturbations: Vec<PerturbDef>,
        #[serde(default)]
        search: Option<SearchConfig>,
        /// Horizon of the persistence runs; defaults to the reduced horizon.
        #[serde(default)]
        horizon: Option<f64>,
    },
    Counterexample {
        lambda: f64,
        a: f64,
        #[serde(default, rename = "T")]
        t: Option<f64>,
    },
    Diagnostics {
        /// Reference values per forward-frame direction; defaults to the
        /// estimated exponents.
        #[serde(default)]
        targets: Option<Vec<f64>>,
        #[serde(default = "minus_one")]
        delta: i8,
        #[serde(default)]
        offsets: Option<Vec<i64>>,
        #[serde(default = "four")]
        l_max: usize,
        #[serde(default = "eta")]
        eta: f64,
        #[serde(default = "ten")]
        max_power: u32,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Spectrum {} => "spectrum",
            Experiment::Reduced { .. } => "reduced",
            Experiment::Perturb { .. } => "perturb",
            Experiment::Counterexample { .. } => "counterexample",
            Experiment::Diagnostics { .. } => "diagnostics",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub field: FieldRef,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub frame_seed: u64,
    #[serde(default)]
    pub l_mode: LMode,
    #[serde(rename = "T")]
    pub t: f64,
    /// Defaults to 10% of `T`.
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub backward_pad: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig<f64>,
    #[serde(default)]
    pub frames: FrameOptions,
    pub experiments: Vec<Experiment>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn burn_in(&self) -> f64 {
        self.burn_in.unwrap_or(0.1 * self.t)
    }

    pub fn initial_point(&self, field: &SharedField<f64>) -> Vec<f64> {
        match &self.x0 {
            Some(x) => x.clone(),
            None => match &self.field {
                FieldRef::Name(n) => default_initial_point(n).unwrap_or_else(|| vec![0.1; field.dim()]),
                FieldRef::Inline(_) => vec![0.1; field.dim()],
            },
        }
    }
}

/// A validated config with the SHA-256 of its canonical JSON form.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    pub raw: Value,
}

/// Hash of the key-sorted compact serialization.
pub fn config_hash(v: &Value) -> String {
    let bytes = serde_json::to_vec(v).expect("serializable");
    hex::encode(Sha256::digest(&bytes))
}

pub fn load_str(text: &str) -> Result<LoadedConfig, Vec<ConfigIssue>> {
    let raw: Value = serde_json::from_str(text).map_err(|e| vec![ConfigIssue { pointer: String::new(), message: format!("invalid JSON: {e}") }])?;
    load_value(raw)
}

pub fn load_value(raw: Value) -> Result<LoadedConfig, Vec<ConfigIssue>> {
    let issues = validate_value(&raw);
    if !issues.is_empty() {
        return Err(issues);
    }
    let config: ExperimentConfig = serde_json::from_value(raw.clone())
        .map_err(|e| vec![ConfigIssue { pointer: String::new(), message: e.to_string() }])?;
    Ok(LoadedConfig { hash: config_hash(&raw), config, raw })
}

struct Checker {
    issues: Vec<ConfigIssue>,
}

fn join(ptr: &str, key: &str) -> String {
    format!("{ptr}/{}", key.replace('~', "~0").replace('/', "~1"))
}

impl Checker {
    fn err(&mut self, pointer: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue { pointer: pointer.into(), message: message.into() });
    }

    fn object<'a>(&mut self, v: &'a Value, ptr: &str, allowed: &[&str], required: &[&str]) -> Option<&'a serde_json::Map<String, Value>> {
        let Some(obj) = v.as_object() else {
            self.err(ptr, "expected an object");
            return None;
        };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.err(join(ptr, key), format!("unknown field '{key}'"));
            }
        }
        for key in required {
            if !obj.contains_key(*key) {
                self.err(join(ptr, key), format!("missing required field '{key}'"));
            }
        }
        Some(obj)
    }

    fn number(&mut self, v: Option<&Value>, ptr: &str) -> Option<f64> {
        let v = v?;
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(ptr, "expected a finite number");
                None
            }
        }
    }

    fn positive(&mut self, v: Option<&Value>, ptr: &str) -> Option<f64> {
        let x = self.number(v, ptr)?;
        if x <= 0.0 {
            self.err(ptr, "must be positive");
            return None;
        }
        Some(x)
    }

    fn uint(&mut self, v: Option<&Value>, ptr: &str) -> Option<u64> {
        let v = v?;
        let r = v.as_u64();
        if r.is_none() {
            self.err(ptr, "expected a non-negative integer");
        }
        r
    }

    fn numbers(&mut self, v: Option<&Value>, ptr: &str) -> Option<Vec<f64>> {
        let v = v?;
        let Some(arr) = v.as_array() else {
            self.err(ptr, "expected an array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(arr.len());
        for (i, x) in arr.iter().enumerate() {
            out.push(self.number(Some(x), &format!("{ptr}/{i}"))?);
        }
        Some(out)
    }

    fn field(&mut self, v: &Value, ptr: &str) -> Option<usize> {
        match v {
            Value::String(name) => match builtin_field::<f64>(name) {
                Ok(f) => Some(f.dim()),
                Err(e) => {
                    self.err(ptr, format!("unknown field '{name}': {e}"));
                    None
                }
            },
            Value::Object(_) => match serde_json::from_value::<PolynomialSpec>(v.clone()) {
                Ok(spec) => match PolynomialField::<f64>::from_spec(&spec) {
                    Ok(_) => Some(spec.dim),
                    Err(e) => {
                        self.err(ptr, e.to_string());
                        None
                    }
                },
                Err(e) => {
                    self.err(ptr, format!("invalid inline field: {e}"));
                    None
                }
            },
            _ => {
                self.err(ptr, "expected a built-in field name or an inline polynomial field");
                None
            }
        }
    }
}

/// Schema and referential checks; no numerical work.
pub fn validate_value(v: &Value) -> Vec<ConfigIssue> {
    let mut c = Checker { issues: Vec::new() };
    let allowed = ["field", "x0", "frame_seed", "l_mode", "T", "burn_in", "backward_pad", "solver", "frames", "experiments", "output_dir"];
    let Some(obj) = c.object(v, "", &allowed, &["field", "frame_seed", "T", "experiments"]) else {
        return c.issues;
    };
    let dim = obj.get("field").and_then(|f| c.field(f, "/field"));
    if let (Some(n), Some(x0)) = (dim, c.numbers(obj.get("x0"), "/x0")) {
        if x0.len() != n {
            c.err("/x0", format!("expected {n} coordinates, got {}", x0.len()));
        }
    }
    c.uint(obj.get("frame_seed"), "/frame_seed");
    let t = c.positive(obj.get("T"), "/T");
    if let Some(b) = c.number(obj.get("burn_in"), "/burn_in") {
        if b < 0.0 || t.is_some_and(|t| b >= t) {
            c.err("/burn_in", "must lie in [0, T)");
        }
    }
    if let Some(p) = c.number(obj.get("backward_pad"), "/backward_pad") {
        if p < 0.0 {
            c.err("/backward_pad", "must be non-negative");
        }
    }
    if let Some(s) = obj.get("solver") {
        match serde_json::from_value::<SolverConfig<f64>>(s.clone()) {
            Ok(cfg) => {
                if let Err(e) = cfg.validate() {
                    c.err("/solver", e.to_string());
                }
            }
            Err(e) => c.err("/solver", e.to_string()),
        }
    }
    if let Some(f) = obj.get("frames") {
        match serde_json::from_value::<FrameOptions>(f.clone()) {
            Ok(o) if o.reorth_every == 0 => c.err("/frames/reorth_every", "must be at least 1"),
            Ok(_) => {}
            Err(e) => c.err("/frames", e.to_string()),
        }
    }
    if let Some(m) = obj.get("l_mode") {
        check_l_mode(&mut c, m, dim);
    }
    if let Some(d) = obj.get("output_dir") {
        if !d.is_string() {
            c.err("/output_dir", "expected a string");
        }
    }
    match obj.get("experiments") {
        Some(Value::Array(list)) => {
            if list.is_empty() {
                c.err("/experiments", "at least one experiment is required");
            }
            for (i, e) in list.iter().enumerate() {
                check_experiment(&mut c, e, &format!("/experiments/{i}"), dim);
            }
        }
        Some(_) => c.err("/experiments", "expected an array"),
        None => {}
    }
    c.issues
}

fn check_l_mode(c: &mut Checker, m: &Value, dim: Option<usize>) {
    let mode = m.get("mode").and_then(Value::as_str);
    match mode {
        Some("auto") => {
            if let Some(obj) = c.object(m, "/l_mode", &["mode", "epsilon_zero"], &[]) {
                c.positive(obj.get("epsilon_zero"), "/l_mode/epsilon_zero");
            }
        }
        Some("explicit") => {
            let Some(obj) = c.object(m, "/l_mode", &["mode", "indices"], &["indices"]) else { return };
            let Some(arr) = obj.get("indices").and_then(Value::as_array) else {
                if obj.contains_key("indices") {
                    c.err("/l_mode/indices", "expected an array of one-based indices");
                }
                return;
            };
            if arr.is_empty() {
                c.err("/l_mode/indices", "at least one index is required");
            }
            let mut seen = Vec::new();
            for (i, x) in arr.iter().enumerate() {
                let ptr = format!("/l_mode/indices/{i}");
                match x.as_u64() {
                    Some(0) | None => c.err(ptr, "indices are one-based positive integers"),
                    Some(k) => {
                        if seen.contains(&k) {
                            c.err(ptr, format!("duplicate index {k}"));
                        } else if dim.is_some_and(|n| k as usize > n) {
                            c.err(ptr, format!("index {k} exceeds dimension {}", dim.unwrap()));
                        }
                        seen.push(k);
                    }
                }
            }
        }
        _ => c.err("/l_mode/mode", "expected \"auto\" or \"explicit\""),
    }
}

fn check_vectors(c: &mut Checker, obj: &serde_json::Map<String, Value>, ptr: &str, keys: &[&str]) -> Option<usize> {
    let mut len = None;
    for key in keys {
        let p = join(ptr, key);
        if let Some(v) = c.numbers(obj.get(*key), &p) {
            match len {
                None => len = Some(v.len()),
                Some(l) if l != v.len() => c.err(p, format!("expected {l} entries, got {}", v.len())),
                _ => {}
            }
        }
    }
    len
}

fn check_perturbation(c: &mut Checker, p: &Value, ptr: &str) {
    let kind = p.get("kind").and_then(Value::as_str);
    let (allowed, vecs): (&[&str], &[&str]) = match kind {
        Some("constant") => (&["kind", "a", "bound"], &["a"]),
        Some("sinusoid") => (&["kind", "amplitude", "frequency", "phase", "bound"], &["amplitude", "frequency", "phase"]),
        Some("saturating") => (&["kind", "b", "gain", "bound"], &["b"]),
        Some("field_difference") => {
            if let Some(obj) = c.object(p, ptr, &["kind", "field", "radius"], &["field"]) {
                if let Some(f) = obj.get("field") {
                    c.field(f, &join(ptr, "field"));
                }
                c.positive(obj.get("radius"), &join(ptr, "radius"));
            }
            return;
        }
        _ => {
            c.err(join(ptr, "kind"), "expected constant, sinusoid, saturating or field_difference");
            return;
        }
    };
    let Some(obj) = c.object(p, ptr, allowed, &[]) else { return };
    let explicit = check_vectors(c, obj, ptr, vecs);
    let bound = obj.get("bound");
    if bound.is_some() {
        c.positive(bound, &join(ptr, "bound"));
    }
    let primary = vecs[0];
    if bound.is_some() == obj.contains_key(primary) {
        c.err(ptr.to_string(), format!("give exactly one of 'bound' or '{primary}'"));
    }
    if kind == Some("sinusoid") && explicit.is_some() && !obj.contains_key("frequency") {
        c.err(join(ptr, "frequency"), "required with explicit amplitudes");
    }
    if kind == Some("saturating") {
        c.number(obj.get("gain"), &join(ptr, "gain"));
    }
}

fn check_experiment(c: &mut Checker, e: &Value, ptr: &str, dim: Option<usize>) {
    let kind = e.get("kind").and_then(Value::as_str);
    match kind {
        Some("spectrum") => {
            c.object(e, ptr, &["kind"], &[]);
        }
        Some("reduced") => {
            if let Some(obj) = c.object(e, ptr, &["kind", "tape_stride"], &[]) {
                if c.uint(obj.get("tape_stride"), &join(ptr, "tape_stride")) == Some(0) {
                    c.err(join(ptr, "tape_stride"), "must be at least 1");
                }
            }
        }
        Some("perturb") => {
            let Some(obj) = c.object(e, ptr, &["kind", "perturbations", "search", "horizon"], &["perturbations"]) else { return };
            match obj.get("perturbations") {
                Some(Value::Array(list)) if !list.is_empty() => {
                    for (i, p) in list.iter().enumerate() {
                        check_perturbation(c, p, &format!("{ptr}/perturbations/{i}"));
                    }
                }
                Some(_) => c.err(join(ptr, "perturbations"), "expected a non-empty array"),
                None => {}
            }
            if let Some(s) = obj.get("search") {
                if let Err(e) = serde_json::from_value::<SearchConfig>(s.clone()) {
                    c.err(join(ptr, "search"), e.to_string());
                }
            }
            c.positive(obj.get("horizon"), &join(ptr, "horizon"));
        }
        Some("counterexample") => {
            let Some(obj) = c.object(e, ptr, &["kind", "lambda", "a", "T"], &["lambda", "a"]) else { return };
            if c.number(obj.get("lambda"), &join(ptr, "lambda")).is_some_and(|l| l >= 0.0) {
                c.err(join(ptr, "lambda"), "must be negative");
            }
            if c.number(obj.get("a"), &join(ptr, "a")).is_some_and(|a| a <= 0.0) {
                c.err(join(ptr, "a"), "must be positive");
            }
            c.positive(obj.get("T"), &join(ptr, "T"));
        }
        Some("diagnostics") => {
            let allowed = ["kind", "targets", "delta", "offsets", "l_max", "eta", "max_power"];
            let Some(obj) = c.object(e, ptr, &allowed, &[]) else { return };
            if let (Some(t), Some(n)) = (c.numbers(obj.get("targets"), &join(ptr, "targets")), dim) {
                if t.len() != n {
                    c.err(join(ptr, "targets"), format!("expected {n} targets, got {}", t.len()));
                }
            }
            if let Some(d) = obj.get("delta") {
                if d.as_i64() != Some(1) && d.as_i64() != Some(-1) {
                    c.err(join(ptr, "delta"), "must be +1 or -1");
                }
            }
            if let Some(o) = obj.get("offsets") {
                match o.as_array() {
                    Some(a) if !a.is_empty() && a.iter().all(|x| x.as_i64().is_some()) => {}
                    _ => c.err(join(ptr, "offsets"), "expected a non-empty array of integers"),
                }
            }
            if c.uint(obj.get("l_max"), &join(ptr, "l_max")) == Some(0) {
                c.err(join(ptr, "l_max"), "must be at least 1");
            }
            c.positive(obj.get("eta"), &join(ptr, "eta"));
            if c.uint(obj.get("max_power"), &join(ptr, "max_power")).is_some_and(|p| p > 30) {
                c.err(join(ptr, "max_power"), "at most 30");
            }
        }
        _ => c.err(join(ptr, "kind"), "expected spectrum, reduced, perturb, counterexample or diagnostics"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({"field": "linear_diag:2,0,-1", "frame_seed": 1, "T": 100, "experiments": [{"kind": "spectrum"}]})
    }

    #[test]
    fn valid_config_has_no_issues() {
        assert!(validate_value(&base()).is_empty());
        let loaded = load_value(base()).unwrap();
        assert_eq!(loaded.config.burn_in(), 10.0);
        assert_eq!(loaded.hash.len(), 64);
    }

    #[test]
    fn missing_seed_is_named() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("frame_seed");
        let issues = validate_value(&v);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].pointer, "/frame_seed");
        assert!(issues[0].message.contains("frame_seed"));
    }

    #[test]
    fn explicit_duplicates_rejected() {
        let mut v = base();
        v["l_mode"] = json!({"mode": "explicit", "indices": [1, 3, 1]});
        let issues = validate_value(&v);
        assert_eq!(issues.len(), 1, "{issues:?}");
        assert_eq!(issues[0].pointer, "/l_mode/indices/2");
        v["l_mode"] = json!({"mode": "explicit", "indices": [1, 4]});
        assert_eq!(validate_value(&v)[0].pointer, "/l_mode/indices/1");
    }

    #[test]
    fn nested_pointers() {
        let mut v = base();
        v["experiments"] = json!([
            {"kind": "perturb", "perturbations": [{"kind": "constant", "bound": -1}]},
            {"kind": "counterexample", "lambda": 0.5, "a": 0.1},
            {"kind": "bogus"}
        ]);
        v["x0"] = json!([1, 2]);
        let ptrs: Vec<String> = validate_value(&v).into_iter().map(|i| i.pointer).collect();
        assert!(ptrs.contains(&"/experiments/0/perturbations/0/bound".to_string()), "{ptrs:?}");
        assert!(ptrs.contains(&"/experiments/1/lambda".to_string()));
        assert!(ptrs.contains(&"/experiments/2/kind".to_string()));
        assert!(ptrs.contains(&"/x0".to_string()));
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = load_str(r#"{"T": 100, "field": "rotation", "frame_seed": 2, "experiments": [{"kind": "spectrum"}]}"#).unwrap();
        let b = load_str(r#"{"experiments": [{"kind": "spectrum"}], "frame_seed": 2, "field": "rotation", "T": 100}"#).unwrap();
        assert_eq!(a.hash, b.hash);
    }
}
