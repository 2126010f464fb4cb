//! Run configuration: a TOML document of `section.key = value` entries.
//!
//! ```toml
//! [material]
//! mu_pa = 26.92e9
//! rho_kg_m3 = 2700.0
//! nu = 0.3
//!
//! [segment]
//! T_m = 0.04
//! H_m = 0.02
//! a_m = 0.0006
//! N = 50
//! gap_m = 0.0
//!
//! [truncation]
//! M = 10
//! Q = 300
//!
//! [ensemble]
//! L = 20
//! master_seed = 20240101
//! average_mode = "zero_fill"      # or "exclude_interior"
//! failure_policy = "abort"        # or "resample"
//!
//! [sweep]
//! wavenumbers_per_m = [400.0, 800.0, 1200.0, 1600.0, 2000.0]
//!
//! [grid]
//! nx = 400
//! ny = 100
//! y_offset = 0.0
//!
//! [outputs]
//! directory = "porowave-out"
//! format = "csv"                  # or "json"
//!
//! [homogenize]
//! fit_window_start_m = 0.0
//! fix_alpha = false
//! ```
//!
//! Every key is optional; missing keys take the values above. Dotted keys
//! (`segment.N = 50`) are equivalent to the table form.

use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use toml::{Table, Value};

use crate::ensemble::{AverageMode, FailurePolicy, GridSpec, MonteCarloSpec};
use crate::error::ConfigError;
use crate::fmt_f64;
use crate::geometry::{RsaOptions, SegmentSpec};
use crate::homogenize::HomogenizeParams;
use crate::scatter::{Material, DEFAULT_MEMORY_CAP};

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(OutputFormat::Csv),
            "json" => Some(OutputFormat::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub material: Material,
    pub nu: f64,
    pub segment: SegmentSpec,
    pub gap: f64,
    pub truncation: usize,
    pub mirrors: usize,
    pub memory_cap: u64,
    pub layouts: usize,
    pub master_seed: u64,
    pub average_mode: AverageMode,
    pub failure_policy: FailurePolicy,
    pub wavenumbers: Vec<f64>,
    pub grid: GridSpec,
    pub output_directory: String,
    pub format: OutputFormat,
    pub fit_window_start: f64,
    pub fix_alpha: bool,
}

pub const DEFAULT_MASTER_SEED: u64 = 20240101;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            material: Material::default(),
            nu: 0.3,
            segment: SegmentSpec::default(),
            gap: 0.0,
            truncation: 10,
            mirrors: 300,
            memory_cap: DEFAULT_MEMORY_CAP,
            layouts: 20,
            master_seed: DEFAULT_MASTER_SEED,
            average_mode: AverageMode::ZeroFill,
            failure_policy: FailurePolicy::Abort,
            wavenumbers: vec![400.0, 800.0, 1200.0, 1600.0, 2000.0],
            grid: GridSpec::default(),
            output_directory: "porowave-out".into(),
            format: OutputFormat::Csv,
            fit_window_start: 0.0,
            fix_alpha: false,
        }
    }
}

impl RunConfig {
    /// Reduced preset for quick runs: `Q = 50`, `L = 10`.
    pub fn reduced() -> Self {
        RunConfig {
            mirrors: 50,
            layouts: 10,
            ..RunConfig::default()
        }
    }

    pub fn rsa_options(&self) -> RsaOptions {
        RsaOptions {
            gap: self.gap,
            ..RsaOptions::default()
        }
    }

    pub fn monte_carlo(&self, wavenumber: f64) -> MonteCarloSpec {
        MonteCarloSpec {
            segment: self.segment,
            rsa: self.rsa_options(),
            material: self.material,
            wavenumber,
            truncation: self.truncation,
            mirrors: self.mirrors,
            memory_cap: self.memory_cap,
            grid: self.grid,
            average_mode: self.average_mode,
            layouts: self.layouts,
            master_seed: self.master_seed,
            failure_policy: self.failure_policy,
        }
    }

    pub fn homogenize_params(&self) -> HomogenizeParams {
        HomogenizeParams {
            material: self.material,
            nu: self.nu,
            count: self.segment.count,
            radius: self.segment.radius,
            height: self.segment.height,
            length: self.segment.length,
            fit_window_start: self.fit_window_start,
            fix_alpha: self.fix_alpha,
        }
    }

    /// Canonical TOML text; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let f = fmt_f64;
        let _ = writeln!(s, "[material]");
        let _ = writeln!(s, "mu_pa = {}", f(self.material.shear_modulus));
        let _ = writeln!(s, "rho_kg_m3 = {}", f(self.material.density));
        let _ = writeln!(s, "nu = {}", f(self.nu));
        let _ = writeln!(s, "\n[segment]");
        let _ = writeln!(s, "T_m = {}", f(self.segment.length));
        let _ = writeln!(s, "H_m = {}", f(self.segment.height));
        let _ = writeln!(s, "a_m = {}", f(self.segment.radius));
        let _ = writeln!(s, "N = {}", self.segment.count);
        let _ = writeln!(s, "gap_m = {}", f(self.gap));
        let _ = writeln!(s, "\n[truncation]");
        let _ = writeln!(s, "M = {}", self.truncation);
        let _ = writeln!(s, "Q = {}", self.mirrors);
        let _ = writeln!(s, "memory_cap_bytes = {}", self.memory_cap);
        let _ = writeln!(s, "\n[ensemble]");
        let _ = writeln!(s, "L = {}", self.layouts);
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "average_mode = \"{}\"", self.average_mode.as_str());
        let _ = writeln!(s, "failure_policy = \"{}\"", self.failure_policy.as_str());
        let _ = writeln!(s, "\n[sweep]");
        let ks: Vec<String> = self.wavenumbers.iter().map(|&k| f(k)).collect();
        let _ = writeln!(s, "wavenumbers_per_m = [{}]", ks.join(", "));
        let _ = writeln!(s, "\n[grid]");
        let _ = writeln!(s, "nx = {}", self.grid.nx);
        let _ = writeln!(s, "ny = {}", self.grid.ny);
        let _ = writeln!(s, "y_offset = {}", f(self.grid.y_offset));
        let _ = writeln!(s, "\n[outputs]");
        let _ = writeln!(
            s,
            "directory = {}",
            Value::String(self.output_directory.clone())
        );
        let _ = writeln!(s, "format = \"{}\"", self.format.as_str());
        let _ = writeln!(s, "\n[homogenize]");
        let _ = writeln!(s, "fit_window_start_m = {}", f(self.fit_window_start));
        let _ = writeln!(s, "fix_alpha = {}", self.fix_alpha);
        s
    }

    /// Hex SHA-256 prefix of the canonical text, excluding the output
    /// location and format (which do not change results).
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            output_directory: String::new(),
            format: OutputFormat::Csv,
            ..self.clone()
        }
        .to_toml();
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Line (1-based) where `section.key` is set, if it can be located.
fn locate(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = h.trim_end_matches(']').trim().to_string();
            if key.is_none() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        let lhs = match line.split_once('=') {
            Some((l, _)) => l.trim().replace(' ', ""),
            None => continue,
        };
        let full = if current.is_empty() {
            lhs.clone()
        } else {
            format!("{current}.{lhs}")
        };
        let wanted = match key {
            Some(k) => format!("{section}.{k}"),
            None => section.to_string(),
        };
        if full == wanted || (key.is_none() && full.starts_with(&format!("{section}."))) {
            return Some(i + 1);
        }
    }
    None
}

struct Section<'a> {
    name: &'static str,
    table: Table,
    text: &'a str,
}

impl Section<'_> {
    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn line(&self, key: &str) -> Option<usize> {
        locate(self.text, self.name, Some(key))
    }

    fn mismatch(&self, key: &str, expected: &'static str) -> ConfigError {
        ConfigError::TypeMismatch {
            key: self.path(key),
            line: self.line(key),
            expected,
        }
    }

    fn constraint(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Constraint {
            key: self.path(key),
            line: self.line(key),
            message: message.into(),
        }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn float(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Float(v)) => Ok(v),
            Some(Value::Integer(v)) => Ok(v as f64),
            Some(_) => Err(self.mismatch(key, "number")),
        }
    }

    fn positive(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.float(key, default)?;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(self.constraint(key, format!("must be positive, got {v}")))
        }
    }

    fn integer(&mut self, key: &str, default: i64) -> Result<i64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Integer(v)) => Ok(v),
            Some(_) => Err(self.mismatch(key, "integer")),
        }
    }

    fn count(&mut self, key: &str, default: usize, min: usize) -> Result<usize> {
        let v = self.integer(key, default as i64)?;
        if v < min as i64 {
            return Err(self.constraint(key, format!("must be at least {min}, got {v}")));
        }
        Ok(v as usize)
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(self.mismatch(key, "string")),
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(_) => Err(self.mismatch(key, "boolean")),
        }
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().next() {
            Some(k) => Err(ConfigError::UnknownKey {
                key: self.path(k),
                line: self.line(k),
            }),
            None => Ok(()),
        }
    }
}

const SECTIONS: [&str; 8] = [
    "material",
    "segment",
    "truncation",
    "ensemble",
    "sweep",
    "grid",
    "outputs",
    "homogenize",
];

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax {
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
    let d = RunConfig::default();

    if let Some(k) = root.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey {
            key: k.clone(),
            line: locate(text, k, None),
        });
    }
    let mut section = |name: &'static str| -> Result<Section<'_>> {
        let table = match root.remove(name) {
            None => Table::new(),
            Some(Value::Table(t)) => t,
            Some(_) => {
                return Err(ConfigError::TypeMismatch {
                    key: name.into(),
                    line: locate(text, name, None),
                    expected: "table",
                })
            }
        };
        Ok(Section { name, table, text })
    };

    let mut s = section("material")?;
    let material = Material {
        shear_modulus: s.positive("mu_pa", d.material.shear_modulus)?,
        density: s.positive("rho_kg_m3", d.material.density)?,
    };
    let nu = s.float("nu", d.nu)?;
    if !(nu > -1.0 && nu < 0.5) {
        return Err(s.constraint("nu", format!("must lie in (-1, 0.5), got {nu}")));
    }
    s.finish()?;

    let mut s = section("segment")?;
    let segment = SegmentSpec {
        length: s.positive("T_m", d.segment.length)?,
        height: s.positive("H_m", d.segment.height)?,
        radius: s.positive("a_m", d.segment.radius)?,
        count: s.count("N", d.segment.count, 0)?,
    };
    let gap = s.float("gap_m", d.gap)?;
    if !(gap >= 0.0 && gap.is_finite()) {
        return Err(s.constraint("gap_m", format!("must be nonnegative, got {gap}")));
    }
    if let Err(e) = segment.validate() {
        return Err(s.constraint("N", e.to_string()));
    }
    if 2.0 * segment.radius >= segment.length || 2.0 * segment.radius + gap > segment.height {
        return Err(s.constraint("a_m", "cavity does not fit in the segment"));
    }
    s.finish()?;

    let mut s = section("truncation")?;
    let truncation = s.count("M", d.truncation, 0)?;
    let mirrors = s.count("Q", d.mirrors, 0)?;
    let memory_cap = s.count("memory_cap_bytes", d.memory_cap as usize, 1)? as u64;
    s.finish()?;

    let mut s = section("ensemble")?;
    let layouts = s.count("L", d.layouts, 1)?;
    let master_seed = s.integer("master_seed", d.master_seed as i64)?;
    if master_seed < 0 {
        return Err(s.constraint("master_seed", "must be nonnegative"));
    }
    let mode = s.string("average_mode", d.average_mode.as_str())?;
    let average_mode = match mode.as_str() {
        "zero_fill" => AverageMode::ZeroFill,
        "exclude_interior" => AverageMode::ExcludeInterior,
        other => {
            return Err(s.constraint(
                "average_mode",
                format!("expected \"zero_fill\" or \"exclude_interior\", got \"{other}\""),
            ))
        }
    };
    let policy = s.string("failure_policy", d.failure_policy.as_str())?;
    let failure_policy = match policy.as_str() {
        "abort" => FailurePolicy::Abort,
        "resample" => FailurePolicy::Resample,
        other => {
            return Err(s.constraint(
                "failure_policy",
                format!("expected \"abort\" or \"resample\", got \"{other}\""),
            ))
        }
    };
    s.finish()?;

    let mut s = section("sweep")?;
    let wavenumbers = match s.take("wavenumbers_per_m") {
        None => d.wavenumbers.clone(),
        Some(Value::Array(items)) => {
            let mut ks = Vec::with_capacity(items.len());
            for v in items {
                let k = match v {
                    Value::Float(f) => f,
                    Value::Integer(i) => i as f64,
                    _ => return Err(s.mismatch("wavenumbers_per_m", "array of numbers")),
                };
                if !(k.is_finite() && k > 0.0) {
                    return Err(s.constraint(
                        "wavenumbers_per_m",
                        format!("wavenumber {k} is not positive"),
                    ));
                }
                ks.push(k);
            }
            ks
        }
        Some(_) => return Err(s.mismatch("wavenumbers_per_m", "array of numbers")),
    };
    if wavenumbers.is_empty() {
        return Err(s.constraint("wavenumbers_per_m", "sweep must not be empty"));
    }
    s.finish()?;

    let mut s = section("grid")?;
    let grid = GridSpec {
        nx: s.count("nx", d.grid.nx, 1)?,
        ny: s.count("ny", d.grid.ny, 1)?,
        y_offset: s.float("y_offset", d.grid.y_offset)?,
    };
    if !grid.y_offset.is_finite() {
        return Err(s.constraint("y_offset", "must be finite"));
    }
    s.finish()?;

    let mut s = section("outputs")?;
    let output_directory = s.string("directory", &d.output_directory)?;
    if output_directory.is_empty() {
        return Err(s.constraint("directory", "must not be empty"));
    }
    let fmt = s.string("format", d.format.as_str())?;
    let format = OutputFormat::parse(&fmt).ok_or_else(|| {
        s.constraint(
            "format",
            format!("expected \"csv\" or \"json\", got \"{fmt}\""),
        )
    })?;
    s.finish()?;

    let mut s = section("homogenize")?;
    let fit_window_start = s.float("fit_window_start_m", d.fit_window_start)?;
    if !(fit_window_start >= 0.0 && fit_window_start < segment.length) {
        return Err(s.constraint(
            "fit_window_start_m",
            format!("must lie in [0, T), got {fit_window_start}"),
        ));
    }
    let fix_alpha = s.boolean("fix_alpha", d.fix_alpha)?;
    s.finish()?;

    Ok(RunConfig {
        material,
        nu,
        segment,
        gap,
        truncation,
        mirrors,
        memory_cap,
        layouts,
        master_seed: master_seed as u64,
        average_mode,
        failure_policy,
        wavenumbers,
        grid,
        output_directory,
        format,
        fit_window_start,
        fix_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.material.shear_modulus, 26.92e9);
        assert_eq!(c.segment.count, 50);
        assert_eq!(c.mirrors, 300);
        assert_eq!(c.wavenumbers, vec![400.0, 800.0, 1200.0, 1600.0, 2000.0]);
    }

    #[test]
    fn negative_count_names_key_and_line() {
        let err = parse_config("# header\nsegment.N = -1\n").unwrap_err();
        assert_eq!(err.key(), Some("segment.N"));
        assert_eq!(err.line(), Some(2));
        assert!(matches!(err, ConfigError::Constraint { .. }));
    }

    #[test]
    fn table_form_and_errors() {
        let text = "[truncation]\nM = 6\n\n[grid]\nnx = 40\nbogus = 1\n";
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.key(), Some("grid.bogus"));
        assert_eq!(err.line(), Some(6));
        assert!(matches!(err, ConfigError::UnknownKey { .. }));

        let err = parse_config("[truncation]\nQ = \"many\"\n").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::TypeMismatch {
                expected: "integer",
                ..
            }
        ));
        assert_eq!(err.line(), Some(2));

        let err = parse_config("weird.key = 1\n").unwrap_err();
        assert_eq!(err.key(), Some("weird"));

        let err = parse_config("a = = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: Some(1), .. }));

        let err = parse_config("sweep.wavenumbers_per_m = []\n").unwrap_err();
        assert_eq!(err.key(), Some("sweep.wavenumbers_per_m"));
        let err = parse_config("ensemble.average_mode = \"mean\"\n").unwrap_err();
        assert_eq!(err.key(), Some("ensemble.average_mode"));
    }

    #[test]
    fn round_trip() {
        let text = "segment.N = 7\ntruncation.M = 3\nsweep.wavenumbers_per_m = [1000, 1234.5]\n\
                    ensemble.average_mode = \"exclude_interior\"\noutputs.format = \"json\"\n\
                    outputs.directory = \"out dir/\\\"x\\\"\"\nhomogenize.fix_alpha = true\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.segment.count, 7);
        assert_eq!(c.wavenumbers, vec![1000.0, 1234.5]);
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(
            parse_config(&RunConfig::reduced().to_toml()).unwrap(),
            RunConfig::reduced()
        );
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_directory: "elsewhere".into(),
            ..a.clone()
        };
        let c = RunConfig {
            master_seed: 1,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
