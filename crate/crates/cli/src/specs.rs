//! Parsers for `--space` and `--kernel` values.
//!
//! Spaces: `grid:LO:HI:N`, `orthonormal:N`, `sphere:SPREAD` (5 clusters of
//! 200 points on the unit sphere in R^3), `example1`, `explicit:PATH.csv`.
//! Kernels: `rbf:L`, `gibbs`.

use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use repsel::model::{
    build_kernel_model, example1_family, make_grid_space, make_orthonormal_space,
    make_sphere_clusters,
};
use repsel::{ActionSpace, BanditFamily, KernelSpec, RewardModel};

pub enum SpaceSpec {
    Grid { lo: f64, hi: f64, count: usize },
    Orthonormal(usize),
    Sphere(f64),
    Example1,
    Explicit(String),
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("invalid {what} '{s}'"))
}

pub fn parse_space(spec: &str) -> Result<SpaceSpec, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["grid", lo, hi, n] => Ok(SpaceSpec::Grid {
            lo: num(lo, "grid bound")?,
            hi: num(hi, "grid bound")?,
            count: num(n, "grid size")?,
        }),
        ["orthonormal", n] => Ok(SpaceSpec::Orthonormal(num(n, "dimension")?)),
        ["sphere", s] => Ok(SpaceSpec::Sphere(num(s, "spread")?)),
        ["example1"] => Ok(SpaceSpec::Example1),
        ["explicit", _, ..] => Ok(SpaceSpec::Explicit(spec["explicit:".len()..].to_string())),
        _ => Err(format!(
            "unknown space '{spec}' (expected grid:LO:HI:N, orthonormal:N, sphere:SPREAD, example1 or explicit:PATH)"
        )),
    }
}

pub fn parse_kernel(spec: &str) -> Result<KernelSpec, String> {
    match spec.split(':').collect::<Vec<_>>().as_slice() {
        ["rbf", l] => KernelSpec::rbf(num(l, "length scale")?).map_err(|e| e.to_string()),
        ["gibbs"] => Ok(KernelSpec::Gibbs),
        _ => Err(format!("unknown kernel '{spec}' (expected rbf:L or gibbs)")),
    }
}

/// Reads `idx,x0,x1,...` (header optional, `idx` column optional).
pub fn read_explicit(path: &str) -> Result<ActionSpace, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    let mut skip_first_col = false;
    if let Some(header) = lines.peek() {
        let first = header.split(',').next().unwrap_or("").trim();
        if first.parse::<f64>().is_err() {
            skip_first_col = first == "idx";
            lines.next();
        }
    }
    let rows = lines
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .skip(skip_first_col as usize)
                .map(|v| num::<f64>(v.trim(), &format!("value on data row {}", i + 1)))
                .collect::<Result<Vec<f64>, String>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    ActionSpace::explicit(rows).map_err(|e| e.to_string())
}

pub fn build_space(spec: &SpaceSpec, seed: u64) -> Result<ActionSpace, String> {
    let err = |e: repsel::Error| e.to_string();
    match spec {
        SpaceSpec::Grid { lo, hi, count } => make_grid_space(*lo, *hi, *count).map_err(err),
        SpaceSpec::Orthonormal(n) => make_orthonormal_space(*n).map_err(err),
        SpaceSpec::Sphere(spread) => {
            make_sphere_clusters(5, 200, *spread, 3, &mut ChaCha8Rng::seed_from_u64(seed))
                .map(|(s, _)| s)
                .map_err(err)
        }
        SpaceSpec::Example1 => Ok(example1_family().model.space().clone()),
        SpaceSpec::Explicit(path) => read_explicit(path),
    }
}

/// Linear model over the space, or a kernel model on it when a kernel is given.
pub fn build_family(space: &str, kernel: Option<&str>, seed: u64) -> Result<BanditFamily, String> {
    let spec = parse_space(space)?;
    if let SpaceSpec::Example1 = spec {
        if kernel.is_some() {
            return Err("example1 is a linear fixture and takes no kernel".into());
        }
        return Ok(example1_family());
    }
    let actions = build_space(&spec, seed)?;
    match kernel {
        None => Ok(BanditFamily::gaussian(RewardModel::LinearCanonical(actions))),
        Some(k) => {
            let model = build_kernel_model(actions, parse_kernel(k)?).map_err(|e| e.to_string())?;
            Ok(BanditFamily::gaussian(RewardModel::KernelSampled(model)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        assert!(matches!(parse_space("grid:0:2:15"), Ok(SpaceSpec::Grid { count: 15, .. })));
        assert!(matches!(parse_space("orthonormal:8"), Ok(SpaceSpec::Orthonormal(8))));
        assert!(matches!(parse_space("explicit:/tmp/a:b.csv"), Ok(SpaceSpec::Explicit(p)) if p == "/tmp/a:b.csv"));
        assert!(parse_space("cube:3").is_err());
        assert!(parse_kernel("rbf:0").is_err());
        assert!(matches!(parse_kernel("gibbs"), Ok(KernelSpec::Gibbs)));
    }

    #[test]
    fn explicit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let space = make_orthonormal_space(3).unwrap();
        let mut buf = Vec::new();
        space.write_csv(&mut buf).unwrap();
        fs::write(&path, buf).unwrap();
        let back = read_explicit(path.to_str().unwrap()).unwrap();
        assert_eq!(back.actions(), space.actions());
    }
}
