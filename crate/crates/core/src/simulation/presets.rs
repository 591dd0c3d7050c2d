use serde::{Deserialize, Serialize};

use super::basis::BASIS_SIZES;
use super::design::{ControlKind, DesignSpec, Variant};
use crate::error::{Error, Result};

/// A named simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub spec: DesignSpec,
    /// True for the κ-norm grids, which report `‖κ_CR‖∞` rather than
    /// estimator performance.
    pub kappa_norm: bool,
}

/// Sample size of the estimator-performance grids.
const MC_N: usize = 700;
const MC_GROUPS: [usize; 3] = [175, 70, 35];
const MC_RATIOS: [[&str; 5]; 4] = [
    ["0.001", "0.101", "0.201", "0.301", "0.401"],
    ["0.001", "0.101", "0.201", "0.301", "0.401"],
    ["0.001", "0.019", "0.049", "0.129", "0.309"],
    ["0.001", "0.100", "0.200", "0.250", "0.333"],
];

/// κ-norm grid labels; label `g` stands for clusters of `700 / g`
/// observations.
const KAPPA_GROUPS: [usize; 3] = [140, 70, 35];

fn kappa_sizes(g: usize) -> [usize; 4] {
    if g == 35 {
        [240, 500, 740, 1000]
    } else {
        [250, 500, 750, 1000]
    }
}

/// Variant, control kind and K/n of each κ-norm table.
fn kappa_table(table: usize) -> Option<(Variant, ControlKind, f64)> {
    let c = ControlKind::Continuous;
    Some(match table {
        6 => (Variant::ManyControls, c, 0.2),
        7 => (Variant::ManyControls, c, 0.3),
        8 => (Variant::ManyControls, c, 0.4),
        9 => (Variant::ManyControls, ControlKind::Discrete, 0.2),
        10 => (Variant::ManyControls, ControlKind::Discrete, 0.3),
        11 => (Variant::ManyControls, ControlKind::Discrete, 0.4),
        12 => (Variant::PartiallyLinear, c, 0.2),
        13 => (Variant::PartiallyLinear, c, 0.3),
        14 => (Variant::PartiallyLinear, c, 0.4),
        15 => (Variant::TwowayFe, c, 0.2),
        16 => (Variant::TwowayFe, c, 1.0 / 3.0),
        _ => return None,
    })
}

fn invalid(name: &str, why: &str) -> Error {
    Error::InvalidInput(format!("invalid preset '{name}': {why}"))
}

fn build(variant: Variant, kind: ControlKind, n: usize, clusters: usize, k: usize) -> DesignSpec {
    match variant {
        Variant::ManyControls => DesignSpec::many_controls(n, clusters, k, kind),
        Variant::PartiallyLinear => DesignSpec::partially_linear(n, clusters, k),
        Variant::TwowayFe => DesignSpec::twoway_fe(n, clusters, k),
    }
}

/// Parses `tableT:G<g>:K<ratio>` (T = 2..5) or `tableT:G<g>:n<n>`
/// (T = 6..16).
pub fn resolve_preset(name: &str) -> Result<Preset> {
    let parts: Vec<&str> = name.trim().split(':').collect();
    let [table, g, last] = parts[..] else {
        return Err(invalid(name, "expected three ':'-separated fields"));
    };
    let table: usize = table
        .strip_prefix("table")
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| invalid(name, "first field must be tableN"))?;
    let g: usize = g
        .strip_prefix('G')
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| invalid(name, "second field must be G<groups>"))?;

    if (2..=5).contains(&table) {
        if !MC_GROUPS.contains(&g) {
            return Err(invalid(name, "G must be one of 175, 70, 35"));
        }
        let ratio = last
            .strip_prefix('K')
            .ok_or_else(|| invalid(name, "third field must be K<ratio>"))?;
        if !MC_RATIOS[table - 2].contains(&ratio) {
            return Err(invalid(
                name,
                &format!("K/n must be one of {}", MC_RATIOS[table - 2].join(", ")),
            ));
        }
        let k =
            ((ratio.parse::<f64>().expect("listed ratio") * MC_N as f64).round() as usize).max(1);
        let spec = match table {
            2 => DesignSpec::many_controls(MC_N, g, k, ControlKind::Continuous),
            3 => DesignSpec::many_controls(MC_N, g, k, ControlKind::Discrete),
            4 => DesignSpec::partially_linear(MC_N, g, k),
            _ => DesignSpec::twoway_fe(MC_N, g, k),
        };
        debug_assert!(table != 4 || BASIS_SIZES.contains(&k));
        spec.validate()?;
        return Ok(Preset {
            name: name.trim().to_string(),
            spec,
            kappa_norm: false,
        });
    }

    let (variant, kind, ratio) =
        kappa_table(table).ok_or_else(|| invalid(name, "table must be 2..16"))?;
    if !KAPPA_GROUPS.contains(&g) {
        return Err(invalid(name, "G must be one of 140, 70, 35"));
    }
    let n: usize = last
        .strip_prefix('n')
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| invalid(name, "third field must be n<size>"))?;
    let size = MC_N / g;
    if n == 0 || n % size != 0 {
        return Err(invalid(
            name,
            &format!("n must be a positive multiple of the cluster size {size}"),
        ));
    }
    let k = ((ratio * n as f64).round() as usize).max(1);
    let spec = build(variant, kind, n, n / size, k);
    spec.validate().map_err(|e| invalid(name, &e.to_string()))?;
    Ok(Preset {
        name: name.trim().to_string(),
        spec,
        kappa_norm: true,
    })
}

/// Every resolvable preset; partially linear κ-norm cells whose control
/// count exceeds the largest expansion are left out.
pub fn list_presets() -> Vec<String> {
    let mut out = Vec::new();
    for (t, ratios) in MC_RATIOS.iter().enumerate() {
        for g in MC_GROUPS {
            for r in ratios {
                out.push(format!("table{}:G{g}:K{r}", t + 2));
            }
        }
    }
    for table in 6..=16 {
        for g in KAPPA_GROUPS {
            for n in kappa_sizes(g) {
                let name = format!("table{table}:G{g}:n{n}");
                if resolve_preset(&name).is_ok() {
                    out.push(name);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn performance_grid() {
        let p = resolve_preset("table2:G175:K0.201").unwrap();
        assert_eq!((p.spec.n, p.spec.clusters, p.spec.k), (700, 175, 141));
        assert!(!p.kappa_norm);
        let ks: Vec<usize> = MC_RATIOS[2]
            .iter()
            .map(|r| resolve_preset(&format!("table4:G70:K{r}")).unwrap().spec.k)
            .collect();
        assert_eq!(ks, [1, 13, 34, 90, 216]);
        let nd: Vec<usize> = MC_RATIOS[3]
            .iter()
            .map(|r| resolve_preset(&format!("table5:G70:K{r}")).unwrap().spec.k)
            .collect();
        assert_eq!(nd, [1, 70, 140, 175, 233]);
        assert_eq!(
            resolve_preset("table3:G35:K0.001")
                .unwrap()
                .spec
                .control_kind,
            ControlKind::Discrete
        );
    }

    #[test]
    fn kappa_grid() {
        let p = resolve_preset("table6:G70:n500").unwrap();
        assert_eq!(
            (p.spec.n, p.spec.clusters, p.spec.k, p.spec.cluster_size()),
            (500, 50, 100, 10)
        );
        assert!(p.kappa_norm);
        assert_eq!(
            resolve_preset("table8:G35:n240")
                .unwrap()
                .spec
                .cluster_size(),
            20
        );
    }

    #[test]
    fn oversized_basis_is_rejected() {
        // 0.4 · 1000 exceeds the largest expansion
        assert!(resolve_preset("table14:G140:n1000").is_err());
        assert_eq!(resolve_preset("table12:G140:n250").unwrap().spec.k, 50);
    }

    #[test]
    fn malformed_names() {
        for bad in [
            "table2",
            "table2:G175:K0.5",
            "table1:G175:K0.201",
            "table6:G70:n505",
            "tableX:G1:K1",
            "table17:G70:n500",
        ] {
            assert!(resolve_preset(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn listed_presets_resolve() {
        let all = list_presets();
        assert!(all.len() > 60 + 8 * 12);
        assert!(all.iter().all(|n| resolve_preset(n).is_ok()));
        assert!(all.contains(&"table16:G35:n1000".to_string()));
    }
}
