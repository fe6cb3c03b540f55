use std::io::Write;

use crate::error::{Error, Result};

/// Friedman ranks of several methods over several datasets (1 = best score).
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `scores[m][d]`, higher is better.
    pub scores: Vec<Vec<f64>>,
    /// `ranks[m][d]`, ties share the average of the ranks they span.
    pub ranks: Vec<Vec<f64>>,
    pub average_ranks: Vec<f64>,
}

impl RankTable {
    pub fn num_methods(&self) -> usize {
        self.methods.len()
    }

    pub fn num_datasets(&self) -> usize {
        self.datasets.len()
    }

    /// Friedman chi-square statistic over the average ranks.
    pub fn friedman_statistic(&self) -> f64 {
        let k = self.num_methods() as f64;
        let n = self.num_datasets() as f64;
        let sum_sq: f64 = self.average_ranks.iter().map(|r| r * r).sum();
        12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0).powi(2) / 4.0)
    }
}

pub fn friedman_ranks(
    methods: &[String],
    datasets: &[String],
    scores: &[Vec<f64>],
) -> Result<RankTable> {
    if methods.len() < 2 {
        return Err(Error::Usage(format!(
            "need at least 2 methods to rank, got {}",
            methods.len()
        )));
    }
    if datasets.is_empty() {
        return Err(Error::Usage("need at least one dataset to rank".into()));
    }
    if scores.len() != methods.len() {
        return Err(Error::Format {
            path: "<scores>".into(),
            line: scores.len() as u64,
            msg: format!("{} score rows for {} methods", scores.len(), methods.len()),
        });
    }
    if let Some((i, row)) = scores.iter().enumerate().find(|(_, r)| r.len() != datasets.len()) {
        return Err(Error::Format {
            path: "<scores>".into(),
            line: i as u64 + 1,
            msg: format!("{} scores for {} datasets", row.len(), datasets.len()),
        });
    }
    let k = methods.len();
    let mut ranks = vec![vec![0.0; datasets.len()]; k];
    for d in 0..datasets.len() {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| scores[b][d].total_cmp(&scores[a][d]));
        let mut start = 0;
        while start < k {
            let mut end = start + 1;
            while end < k && scores[order[end]][d] == scores[order[start]][d] {
                end += 1;
            }
            // positions start..end hold ranks start+1..=end
            let shared = (start + 1 + end) as f64 / 2.0;
            for &m in &order[start..end] {
                ranks[m][d] = shared;
            }
            start = end;
        }
    }
    let average_ranks = ranks
        .iter()
        .map(|r| r.iter().sum::<f64>() / datasets.len() as f64)
        .collect();
    Ok(RankTable {
        methods: methods.to_vec(),
        datasets: datasets.to_vec(),
        scores: scores.to_vec(),
        ranks,
        average_ranks,
    })
}

/// Two-tailed Nemenyi critical values `q_alpha` (studentized range over sqrt 2), k = 2..=10.
const Q_05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
const Q_10: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];

pub fn nemenyi_q(k_methods: usize, alpha: f64) -> Result<f64> {
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_10
    } else {
        return Err(Error::Parameter(format!(
            "alpha must be 0.05 or 0.10, got {alpha}"
        )));
    };
    if !(2..=10).contains(&k_methods) {
        return Err(Error::Parameter(format!(
            "Nemenyi table covers 2..=10 methods, got {k_methods}"
        )));
    }
    Ok(table[k_methods - 2])
}

/// Critical difference `q_alpha(k) * sqrt(k (k + 1) / (6 N))`.
pub fn nemenyi_cd(k_methods: usize, n_datasets: usize, alpha: f64) -> Result<f64> {
    let q = nemenyi_q(k_methods, alpha)?;
    if n_datasets == 0 {
        return Err(Error::Parameter("need at least one dataset".into()));
    }
    let k = k_methods as f64;
    Ok(q * (k * (k + 1.0) / (6.0 * n_datasets as f64)).sqrt())
}

/// Two methods differ significantly when their average ranks are further apart than `cd`.
pub fn is_significant(rank_gap: f64, cd: f64) -> bool {
    rank_gap.abs() > cd
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairVerdict {
    pub method_a: String,
    pub method_b: String,
    pub rank_gap: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    pub alpha: f64,
    pub cd: f64,
    pub pairs: Vec<PairVerdict>,
}

pub fn significance_report(table: &RankTable, alpha: f64) -> Result<SignificanceReport> {
    let cd = nemenyi_cd(table.num_methods(), table.num_datasets(), alpha)?;
    let mut pairs = Vec::new();
    for a in 0..table.num_methods() {
        for b in a + 1..table.num_methods() {
            let gap = (table.average_ranks[a] - table.average_ranks[b]).abs();
            pairs.push(PairVerdict {
                method_a: table.methods[a].clone(),
                method_b: table.methods[b].clone(),
                rank_gap: gap,
                significant: is_significant(gap, cd),
            });
        }
    }
    Ok(SignificanceReport { alpha, cd, pairs })
}

impl SignificanceReport {
    /// `method_a,method_b,rank_gap,cd,significant` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method_a", "method_b", "rank_gap", "cd", "significant"])?;
        for p in &self.pairs {
            w.write_record([
                p.method_a.as_str(),
                p.method_b.as_str(),
                &crate::fmt_sig(p.rank_gap),
                &crate::fmt_sig(self.cd),
                if p.significant { "true" } else { "false" },
            ])?;
        }
        w.flush().map_err(|e| Error::io("<significance>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn clear_winner() {
        let t = friedman_ranks(&names("m", 2), &names("d", 3), &[vec![0.9, 0.8, 0.7], vec![0.5, 0.4, 0.3]]).unwrap();
        assert_eq!(t.average_ranks, vec![1.0, 2.0]);
    }

    #[test]
    fn full_tie_gets_middle_rank() {
        let t = friedman_ranks(&names("m", 3), &names("d", 1), &[vec![0.5], vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(t.average_ranks, vec![2.0, 2.0, 2.0]);
        let partial = friedman_ranks(&names("m", 3), &names("d", 1), &[vec![0.9], vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(partial.average_ranks, vec![1.0, 2.5, 2.5]);
    }

    #[test]
    fn ragged_and_too_few() {
        assert!(matches!(
            friedman_ranks(&names("m", 2), &names("d", 2), &[vec![0.1, 0.2], vec![0.3]]),
            Err(Error::Format { .. })
        ));
        assert!(friedman_ranks(&names("m", 1), &names("d", 1), &[vec![0.1]]).is_err());
    }

    #[test]
    fn critical_difference_values() {
        let cd = nemenyi_cd(4, 60, 0.05).unwrap();
        assert!((cd - 0.6051).abs() < 0.01, "{cd}");
        let small = nemenyi_cd(2, 1_000_000, 0.05).unwrap();
        assert!(small < 0.01);
        let ratio = nemenyi_cd(5, 10, 0.05).unwrap() / nemenyi_cd(5, 20, 0.05).unwrap();
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
        assert!(nemenyi_cd(11, 10, 0.05).is_err());
        assert!(nemenyi_cd(4, 10, 0.01).is_err());
        assert!(nemenyi_cd(4, 10, 0.10).unwrap() < nemenyi_cd(4, 10, 0.05).unwrap());
    }

    #[test]
    fn decision_rule() {
        assert!(is_significant(0.7, 0.6051));
        assert!(!is_significant(0.0, 0.6051));
        let t = friedman_ranks(&names("m", 2), &names("d", 2), &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let rep = significance_report(&t, 0.05).unwrap();
        assert!(rep.pairs.iter().all(|p| !p.significant));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("method_a,method_b,rank_gap,cd,significant"));
    }

    #[test]
    fn friedman_statistic_zero_when_tied() {
        let t = friedman_ranks(&names("m", 3), &names("d", 4), &vec![vec![0.5; 4]; 3]).unwrap();
        assert!(t.friedman_statistic().abs() < 1e-12);
    }
}
