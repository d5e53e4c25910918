//! Parser for the line-oriented model file.
//!
//! Directives, one per line, `#` starts a comment:
//!
//! ```text
//! constant on|off
//! random_intercept on|off
//! fixed <name> [<name>...]
//! random <name> <normal|lognormal|triangular|uniform|weibull> [sign=-]
//! hm <name>: <z1> [<z2>...]
//! grouping individual|stratum
//! draws <R>
//! halton skip=<n> scramble=<on|off> seed=<u64>
//! ```
//!
//! Defaults: constant on, grouping individual, draws 1000, halton skip=50
//! scramble=on seed=42.

use mcclogit::likelihood::RandomCoef;
use mcclogit::mixing::MixingKind;
use mcclogit::quasirandom::HaltonConfig;
use mcclogit::{Error, Grouping, ModelSpec, Result};

pub fn parse_model_file(source: &str) -> Result<ModelSpec> {
    let mut spec = ModelSpec {
        constant: true,
        random_intercept: false,
        fixed: Vec::new(),
        randoms: Vec::new(),
        grouping: Grouping::Individual,
        draws: 1000,
        halton: HaltonConfig {
            dimension: 1,
            skip: 50,
            scramble: true,
            seed: 42,
        },
    };
    let mut hm_lines: Vec<(usize, String, Vec<String>)> = Vec::new();

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let directive = tokens.next().unwrap();
        let rest: Vec<&str> = tokens.collect();
        match directive {
            "constant" => spec.constant = parse_switch(line_no, &rest)?,
            "random_intercept" => spec.random_intercept = parse_switch(line_no, &rest)?,
            "fixed" => {
                if rest.is_empty() {
                    return Err(Error::parse(line_no, "`fixed` needs at least one name"));
                }
                spec.fixed.extend(rest.iter().map(|s| s.to_string()));
            }
            "random" => {
                if rest.len() < 2 {
                    return Err(Error::parse(
                        line_no,
                        "`random` needs a name and a distribution",
                    ));
                }
                let kind = MixingKind::from_token(rest[1]).map_err(|_| {
                    Error::parse(line_no, format!("unknown distribution token `{}`", rest[1]))
                })?;
                let mut negative = false;
                for extra in &rest[2..] {
                    if *extra == "sign=-" {
                        if kind != MixingKind::Lognormal {
                            return Err(Error::parse(
                                line_no,
                                "`sign=-` applies to lognormal coefficients only",
                            ));
                        }
                        negative = true;
                    } else {
                        return Err(Error::parse(line_no, format!("unexpected token `{extra}`")));
                    }
                }
                spec.randoms.push(RandomCoef {
                    name: rest[0].to_string(),
                    kind,
                    negative,
                    hm: Vec::new(),
                });
            }
            "hm" => {
                // `hm <name>: <z1> <z2>...` with the colon glued to the name
                // or standing alone.
                let mut parts = rest.clone();
                if parts.is_empty() {
                    return Err(Error::parse(line_no, "`hm` needs a target and shifters"));
                }
                let target = if let Some(stripped) = parts[0].strip_suffix(':') {
                    let t = stripped.to_string();
                    parts.remove(0);
                    t
                } else if parts.len() > 1 && parts[1] == ":" {
                    let t = parts[0].to_string();
                    parts.drain(0..2);
                    t
                } else {
                    return Err(Error::parse(
                        line_no,
                        "`hm` syntax is `hm <name>: <z1> <z2>...`",
                    ));
                };
                if parts.is_empty() {
                    return Err(Error::parse(line_no, "`hm` needs at least one shifter"));
                }
                hm_lines.push((line_no, target, parts.iter().map(|s| s.to_string()).collect()));
            }
            "grouping" => {
                spec.grouping = match rest.as_slice() {
                    ["individual"] => Grouping::Individual,
                    ["stratum"] => Grouping::Stratum,
                    _ => {
                        return Err(Error::parse(
                            line_no,
                            "`grouping` must be `individual` or `stratum`",
                        ))
                    }
                };
            }
            "draws" => {
                let [value] = rest.as_slice() else {
                    return Err(Error::parse(line_no, "`draws` needs one count"));
                };
                spec.draws = value
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("bad draw count `{value}`")))?;
            }
            "halton" => {
                for kv in &rest {
                    let Some((key, value)) = kv.split_once('=') else {
                        return Err(Error::parse(
                            line_no,
                            format!("`halton` takes key=value pairs, got `{kv}`"),
                        ));
                    };
                    match key {
                        "skip" => {
                            spec.halton.skip = value.parse().map_err(|_| {
                                Error::parse(line_no, format!("bad skip `{value}`"))
                            })?
                        }
                        "scramble" => {
                            spec.halton.scramble = match value {
                                "on" => true,
                                "off" => false,
                                _ => {
                                    return Err(Error::parse(
                                        line_no,
                                        format!("scramble must be on|off, got `{value}`"),
                                    ))
                                }
                            }
                        }
                        "seed" => {
                            spec.halton.seed = value.parse().map_err(|_| {
                                Error::parse(line_no, format!("bad seed `{value}`"))
                            })?
                        }
                        _ => {
                            return Err(Error::parse(
                                line_no,
                                format!("unknown halton key `{key}`"),
                            ))
                        }
                    }
                }
            }
            other => {
                return Err(Error::parse(line_no, format!("unknown keyword `{other}`")));
            }
        }
    }

    for (line_no, target, shifters) in hm_lines {
        let Some(rc) = spec.randoms.iter_mut().find(|r| r.name == target) else {
            return Err(Error::parse(
                line_no,
                format!("`hm` target `{target}` is not a declared random covariate"),
            ));
        };
        rc.hm.extend(shifters);
    }

    spec.validate()
        .map_err(|e| Error::parse(0, format!("inconsistent model file: {e}")))?;
    Ok(spec)
}

fn parse_switch(line_no: usize, rest: &[&str]) -> Result<bool> {
    match rest {
        ["on"] => Ok(true),
        ["off"] => Ok(false),
        _ => Err(Error::parse(line_no, "expected `on` or `off`")),
    }
}
