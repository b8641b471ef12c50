use std::path::{Path, PathBuf};

use brownlab::{BrownParams, CircleMeasure};
use clap::Args;
use num_complex::Complex64;

use crate::CliError;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Initial measure: a built-in name (delta1, four_points), inline JSON or a JSON file path.
    #[arg(long, default_value = "delta1")]
    pub measure: String,
    /// Variance parameter s > 0.
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    /// Covariance parameter τ written as "a+bi"; must satisfy |τ − s| ≤ s.
    #[arg(long, default_value = "1", value_parser = parse_complex)]
    pub tau: Complex64,
    /// Seed for every random stream of the run.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker thread cap (also read from BROWNLAB_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Validated configuration handed to a subcommand.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub measure: CircleMeasure,
    pub params: BrownParams,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn from_args(args: &CommonArgs) -> Result<Self, CliError> {
        let measure = load_measure(&args.measure)?;
        let params = BrownParams::new(args.s, args.tau)?;
        Ok(Self { measure, params, seed: args.seed, out: args.out.clone() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Resolves `--measure` as a built-in name, inline JSON or a file.
pub fn load_measure(source: &str) -> Result<CircleMeasure, CliError> {
    if let Some(m) = CircleMeasure::builtin(source) {
        return Ok(m);
    }
    let text = source.trim_start();
    if text.starts_with('{') {
        return Ok(CircleMeasure::from_json(text)?);
    }
    let path = Path::new(source);
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("measure {source:?} is not a built-in name and cannot be read: {e}")))?;
    Ok(CircleMeasure::from_json(&body)?)
}

/// Parses "a+bi", "a-bi", "a", "bi", "i" and "-i" with optional exponents.
pub fn parse_complex(text: &str) -> Result<Complex64, String> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return Err("empty complex number".into());
    }
    let bad = || format!("cannot parse {text:?} as a complex number \"a+bi\"");
    let real = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let z = match t.strip_suffix('i').or_else(|| t.strip_suffix('j')) {
        None => Complex64::new(real(&t)?, 0.0),
        Some(body) => {
            let bytes = body.as_bytes();
            let split = (1..bytes.len())
                .rev()
                .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
            let (re, im) = match split {
                Some(k) => (real(&body[..k])?, &body[k..]),
                None => (0.0, body),
            };
            let im = match im {
                "" | "+" => 1.0,
                "-" => -1.0,
                s => real(s)?,
            };
            Complex64::new(re, im)
        }
    };
    if z.re.is_finite() && z.im.is_finite() {
        Ok(z)
    } else {
        Err(bad())
    }
}

/// Parses "x_min,x_max,y_min,y_max".
pub fn parse_bounds(text: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("bounds {text:?} must be four numbers x_min,x_max,y_min,y_max"))?;
    <[f64; 4]>::try_from(v).map_err(|_| format!("bounds {text:?} must have exactly four entries"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_forms() {
        let c = Complex64::new;
        for (s, z) in [
            ("1+1i", c(1.0, 1.0)),
            ("1-0.5i", c(1.0, -0.5)),
            ("2", c(2.0, 0.0)),
            ("-3i", c(0.0, -3.0)),
            ("i", c(0.0, 1.0)),
            ("-i", c(0.0, -1.0)),
            ("0.5+i", c(0.5, 1.0)),
            ("1e-3+2.5e-1i", c(1e-3, 0.25)),
            ("-1E+2-1e-2i", c(-100.0, -0.01)),
            (" 1 + 2i ", c(1.0, 2.0)),
        ] {
            assert_eq!(parse_complex(s).unwrap(), z, "{s}");
        }
        for s in ["", "abc", "1+", "1++2i", "nan", "1,5+2i"] {
            assert!(parse_complex(s).is_err(), "{s}");
        }
    }

    #[test]
    fn bounds_form() {
        assert_eq!(parse_bounds("-1,1,-2,2").unwrap(), [-1.0, 1.0, -2.0, 2.0]);
        assert!(parse_bounds("1,2,3").is_err());
    }
}
