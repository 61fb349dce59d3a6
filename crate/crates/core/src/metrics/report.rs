//! Stratified evaluation summaries and their rendered table.

use serde::{Deserialize, Serialize};

/// Population mean/std over the scored slices of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MetricStats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MetricStats {
                mean: 0.0,
                std: 0.0,
                n: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        MetricStats {
            mean,
            std: var.sqrt(),
            n,
        }
    }

    /// Pools group statistics into the statistics of the concatenation.
    pub fn merge(groups: &[MetricStats]) -> Self {
        let n: usize = groups.iter().map(|g| g.n).sum();
        if n == 0 {
            return MetricStats::from_values(&[]);
        }
        let sum: f64 = groups.iter().map(|g| g.mean * g.n as f64).sum();
        let sum_sq: f64 = groups
            .iter()
            .map(|g| (g.std.powi(2) + g.mean.powi(2)) * g.n as f64)
            .sum();
        let mean = sum / n as f64;
        MetricStats {
            mean,
            std: (sum_sq / n as f64 - mean.powi(2)).max(0.0).sqrt(),
            n,
        }
    }

    fn cell(&self) -> String {
        if self.n == 0 {
            "–".to_string()
        } else {
            format!("{:.3} ({:.3})", self.mean, self.std)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub dice: MetricStats,
    pub hd_mm: MetricStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub seeds: Vec<u64>,
    /// Subjects that could not be scored, with the cause.
    /// Kept ahead of the region tables so the report serializes to TOML.
    pub excluded: Vec<(String, String)>,
    pub apex: RegionMetrics,
    pub mid: RegionMetrics,
    pub base: RegionMetrics,
}

impl EvalReport {
    pub fn regions(&self) -> [(&'static str, &RegionMetrics); 3] {
        [
            ("Apex", &self.apex),
            ("Middle", &self.mid),
            ("Base", &self.base),
        ]
    }

    /// Slices scored across all regions (Dice and HD always pair up).
    pub fn total_n(&self) -> usize {
        self.regions().iter().map(|(_, r)| r.dice.n).sum()
    }

    /// Pools reports slice-wise, e.g. the per-seed runs of one experiment
    /// cell. Model/split labels are taken from the first report; seed lists
    /// concatenate.
    pub fn merge(reports: &[EvalReport]) -> Option<EvalReport> {
        let first = reports.first()?;
        let pool = |pick: &dyn Fn(&EvalReport) -> &RegionMetrics| {
            let dice: Vec<_> = reports.iter().map(|r| pick(r).dice).collect();
            let hd: Vec<_> = reports.iter().map(|r| pick(r).hd_mm).collect();
            RegionMetrics {
                dice: MetricStats::merge(&dice),
                hd_mm: MetricStats::merge(&hd),
            }
        };
        Some(EvalReport {
            model: first.model.clone(),
            split: first.split.clone(),
            seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
            apex: pool(&|r| &r.apex),
            mid: pool(&|r| &r.mid),
            base: pool(&|r| &r.base),
            excluded: reports.iter().flat_map(|r| r.excluded.clone()).collect(),
        })
    }

    /// Renders the mean (std) table, one row per region.
    pub fn table(&self) -> String {
        let mut rows = vec![
            ("".to_string(), "Dice".to_string(), "HD (mm)".to_string()),
        ];
        for (name, region) in self.regions() {
            rows.push((
                format!("{name} (n={})", region.dice.n),
                region.dice.cell(),
                region.hd_mm.cell(),
            ));
        }
        let width = |pick: &dyn Fn(&(String, String, String)) -> usize| {
            rows.iter().map(pick).max().unwrap_or(0)
        };
        let (w0, w1, w2) = (
            width(&|r| r.0.chars().count()),
            width(&|r| r.1.chars().count()),
            width(&|r| r.2.chars().count()),
        );
        let seeds = self
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let mut out = format!(
            "model {} · split {} · seeds [{}]\n",
            self.model, self.split, seeds
        );
        let bar = |l: char, m: char, r: char| {
            format!(
                "{l}{}{m}{}{m}{}{r}\n",
                "─".repeat(w0 + 2),
                "─".repeat(w1 + 2),
                "─".repeat(w2 + 2)
            )
        };
        out.push_str(&bar('┌', '┬', '┐'));
        for (i, (a, b, c)) in rows.iter().enumerate() {
            out.push_str(&format!("│ {a:<w0$} │ {b:<w1$} │ {c:<w2$} │\n"));
            if i == 0 {
                out.push_str(&bar('├', '┼', '┤'));
            }
        }
        out.push_str(&bar('└', '┴', '┘'));
        if !self.excluded.is_empty() {
            out.push_str(&format!("excluded subjects ({}):\n", self.excluded.len()));
            for (id, why) in &self.excluded {
                out.push_str(&format!("  {id}: {why}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn stats(values: &[f64]) -> MetricStats {
        MetricStats::from_values(values)
    }

    #[test]
    fn stats_match_direct_computation() {
        let s = stats(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(s.mean, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std, (1.25f64).sqrt(), epsilon = 1e-15);
        assert_eq!(s.n, 4);
        assert_eq!(stats(&[]).n, 0);
        assert_eq!(stats(&[7.0]).std, 0.0);
    }

    #[test]
    fn merge_equals_concatenation() {
        let a = [0.91, 0.85, 0.99, 0.72];
        let b = [0.65, 0.88];
        let c = [0.995];
        let all: Vec<f64> = a.iter().chain(&b).chain(&c).copied().collect();
        let merged = MetricStats::merge(&[stats(&a), stats(&b), stats(&c)]);
        let direct = stats(&all);
        assert_eq!(merged.n, direct.n);
        assert_abs_diff_eq!(merged.mean, direct.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(merged.std, direct.std, epsilon = 1e-12);
        assert_eq!(MetricStats::merge(&[stats(&[]), stats(&[])]).n, 0);
    }

    fn report(dice: &[f64], seeds: Vec<u64>) -> EvalReport {
        let region = RegionMetrics {
            dice: stats(dice),
            hd_mm: stats(&[1.5; 3]),
        };
        EvalReport {
            model: "mv_unet".into(),
            split: "test".into(),
            seeds,
            apex: region,
            mid: region,
            base: region,
            excluded: vec![],
        }
    }

    #[test]
    fn report_merge_pools_seeds_and_slices() {
        let a = report(&[0.9, 0.8], vec![0]);
        let b = report(&[0.7], vec![1]);
        let m = EvalReport::merge(&[a, b]).unwrap();
        assert_eq!(m.seeds, vec![0, 1]);
        assert_eq!(m.apex.dice.n, 3);
        assert_abs_diff_eq!(m.apex.dice.mean, 0.8, epsilon = 1e-12);
        assert!(EvalReport::merge(&[]).is_none());
    }

    #[test]
    fn table_lists_all_cells() {
        let mut r = report(&[0.912, 0.871], vec![0, 1, 2]);
        r.excluded.push(("s0042".into(), "priors missing".into()));
        let t = r.table();
        for needle in [
            "Dice",
            "HD (mm)",
            "Apex (n=2)",
            "Middle",
            "Base",
            "0.891 (0.021)",
            "1.500 (0.000)",
            "seeds [0, 1, 2]",
            "s0042: priors missing",
        ] {
            assert!(t.contains(needle), "missing {needle:?} in\n{t}");
        }
        let lines: Vec<&str> = t.lines().collect();
        let widths: Vec<usize> = lines[1..7].iter().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "ragged table\n{t}");
    }

    #[test]
    fn empty_region_renders_a_dash() {
        let mut r = report(&[0.9], vec![0]);
        r.base = RegionMetrics {
            dice: stats(&[]),
            hd_mm: stats(&[]),
        };
        assert!(r.table().contains('–'));
        assert_eq!(r.total_n(), 2);
    }
}
