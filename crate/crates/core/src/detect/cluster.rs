//! Grouping candidate blocks with exact 1-D K-means and the gap statistic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Optimal 1-D K-means for every `K` in `1..=k_max` on sorted points.
/// Returns, per `K`, the within-cluster sum of squares and the cluster
/// start offsets.
pub fn kmeans_1d_exact(sorted: &[f64], k_max: usize) -> Vec<(f64, Vec<usize>)> {
    let n = sorted.len();
    let k_max = k_max.min(n);
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
    }
    let cost = |i: usize, j: usize| -> f64 {
        let m = (j - i) as f64;
        let s = s1[j] - s1[i];
        (s2[j] - s2[i] - s * s / m).max(0.0)
    };
    // best[k][j]: optimal cost of the first j points in k+1 clusters.
    let mut best = vec![vec![f64::INFINITY; n + 1]; k_max];
    let mut arg = vec![vec![0usize; n + 1]; k_max];
    for j in 1..=n {
        best[0][j] = cost(0, j);
    }
    for k in 1..k_max {
        for j in k + 1..=n {
            for i in k..j {
                let c = best[k - 1][i] + cost(i, j);
                if c < best[k][j] {
                    best[k][j] = c;
                    arg[k][j] = i;
                }
            }
        }
    }
    (0..k_max)
        .map(|k| {
            let mut starts = Vec::with_capacity(k + 1);
            let mut j = n;
            for kk in (1..=k).rev() {
                let i = arg[kk][j];
                starts.push(i);
                j = i;
            }
            starts.push(0);
            starts.reverse();
            (best[k][n], starts)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gap: Vec<f64>,
    pub s: Vec<f64>,
    pub k: usize,
}

/// How `K` is read off the gap curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapRule {
    /// First `K` with `Gap(K) >= Gap(K+1) - s_{K+1}`.
    FirstSe,
    /// Smallest `K` with `Gap(K) >= Gap(K*) - s_{K*}`, `K*` the global maximum.
    /// Unlike `FirstSe` it separates three or more evenly spaced groups.
    GlobalSe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapOptions {
    pub references: usize,
    pub max_clusters: usize,
    pub seed: u64,
    pub rule: GapRule,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            references: 50,
            max_clusters: 10,
            seed: 0,
            rule: GapRule::GlobalSe,
        }
    }
}

/// Number of clusters in `sorted` by the gap statistic against uniform
/// references on `[lo, hi)`.
pub fn gap_statistic(sorted: &[f64], lo: f64, hi: f64, k_max: usize, opts: &GapOptions) -> GapReport {
    let k_max = k_max.min(sorted.len()).max(1);
    let log_w = |pts: &[f64]| -> Vec<f64> {
        kmeans_1d_exact(pts, k_max)
            .into_iter()
            .map(|(w, _)| w.max(f64::MIN_POSITIVE).ln())
            .collect()
    };
    let observed = log_w(sorted);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let b = opts.references.max(1);
    let mut refs = vec![vec![0.0; k_max]; b];
    let mut draw = vec![0.0; sorted.len()];
    for r in refs.iter_mut() {
        for v in draw.iter_mut() {
            *v = rng.random_range(lo..hi);
        }
        draw.sort_by(f64::total_cmp);
        *r = log_w(&draw);
    }
    let mut gap = vec![0.0; k_max];
    let mut s = vec![0.0; k_max];
    for k in 0..k_max {
        let mean = refs.iter().map(|r| r[k]).sum::<f64>() / b as f64;
        let var = refs.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / b as f64;
        gap[k] = mean - observed[k];
        s[k] = var.sqrt() * (1.0 + 1.0 / b as f64).sqrt();
    }
    let k = match opts.rule {
        GapRule::FirstSe => (0..k_max - 1)
            .find(|&k| gap[k] >= gap[k + 1] - s[k + 1])
            .map_or(k_max, |k| k + 1),
        GapRule::GlobalSe => {
            let top = (1..k_max).fold(0, |b, k| if gap[k] > gap[b] { k } else { b });
            (0..=top).find(|&k| gap[k] >= gap[top] - s[top]).unwrap_or(top) + 1
        }
    };
    GapReport { gap, s, k }
}

/// Groups candidate block starts (ascending day indices). Each block is
/// represented by its days when choosing `K`; a candidate joins the cluster
/// holding its middle day, and clusters meeting in touching blocks are merged.
pub fn cluster_candidates(
    candidates: &[usize],
    block_lens: &[usize],
    opts: &GapOptions,
) -> (Vec<Vec<usize>>, Option<GapReport>) {
    match candidates.len() {
        0 => return (Vec::new(), None),
        1 => return (vec![candidates.to_vec()], None),
        _ => {}
    }
    let mut days = Vec::new();
    for (&c, &len) in candidates.iter().zip(block_lens) {
        days.extend((c..c + len).map(|d| d as f64));
    }
    days.sort_by(f64::total_cmp);
    days.dedup();
    let lo = days[0];
    let hi = days[days.len() - 1] + 1.0;
    let k_max = candidates.len().min(opts.max_clusters);
    let report = gap_statistic(&days, lo, hi, k_max, opts);
    let (_, starts) = kmeans_1d_exact(&days, report.k).swap_remove(report.k - 1);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); starts.len()];
    for (&c, &len) in candidates.iter().zip(block_lens) {
        let mid = (c + (len - 1) / 2) as f64;
        let pos = days.partition_point(|d| *d < mid);
        let idx = starts.partition_point(|s| *s <= pos) - 1;
        clusters[idx].push(c);
    }
    clusters.retain(|c| !c.is_empty());
    // Candidates in touching blocks mark the same break; never split them.
    let len_of = |c: usize| block_lens[candidates.iter().position(|&x| x == c).unwrap()];
    let mut merged: Vec<Vec<usize>> = Vec::with_capacity(clusters.len());
    for c in clusters {
        match merged.last_mut() {
            Some(prev) if c[0] <= prev[prev.len() - 1] + len_of(prev[prev.len() - 1]) => prev.extend(c),
            _ => merged.push(c),
        }
    }
    (merged, Some(report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_kmeans_small() {
        let pts = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let all = kmeans_1d_exact(&pts, 3);
        assert!((all[0].0 - 125.5).abs() < 1e-9);
        assert_eq!(all[1].1, vec![0, 3]);
        assert!((all[1].0 - 4.0).abs() < 1e-12);
        assert!((all[2].0 - 2.5).abs() < 1e-12);
    }

    #[test]
    fn exact_kmeans_beats_brute_force_partitions() {
        let pts = [0.0, 0.4, 1.1, 3.0, 3.2, 7.5, 8.0, 8.1];
        let n = pts.len();
        let sse = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        };
        let all = kmeans_1d_exact(&pts, 3);
        // Every contiguous 3-partition.
        let mut best = f64::INFINITY;
        for a in 1..n {
            for b in a + 1..n {
                best = best.min(sse(&pts[..a]) + sse(&pts[a..b]) + sse(&pts[b..]));
            }
        }
        assert!((all[2].0 - best).abs() < 1e-12);
    }

    #[test]
    fn single_candidate_is_one_cluster() {
        let (c, rep) = cluster_candidates(&[100], &[8], &GapOptions::default());
        assert_eq!(c, vec![vec![100]]);
        assert!(rep.is_none());
    }

    #[test]
    fn two_separated_pairs() {
        let (c, rep) = cluster_candidates(&[98, 105, 301, 308], &[7; 4], &GapOptions::default());
        assert_eq!(c, vec![vec![98, 105], vec![301, 308]]);
        assert_eq!(rep.unwrap().k, 2);
    }

    #[test]
    fn adjacent_blocks_stay_together() {
        let (c, _) = cluster_candidates(&[97, 105], &[8, 8], &GapOptions::default());
        assert_eq!(c, vec![vec![97, 105]]);
    }

    #[test]
    fn touching_blocks_are_merged_even_when_k_splits_them() {
        // Scenario H layout: the gap statistic picks K = 3 and cuts the
        // 145..161 run, leaving two points for one break.
        let (c, rep) = cluster_candidates(&[145, 153, 249], &[8, 8, 8], &GapOptions::default());
        assert_eq!(c, vec![vec![145, 153], vec![249]]);
        assert_eq!(rep.unwrap().k, 3);
    }

    #[test]
    fn distant_singletons_split() {
        let (c, _) = cluster_candidates(&[81, 161], &[8, 8], &GapOptions::default());
        assert_eq!(c, vec![vec![81], vec![161]]);
        let (c, _) = cluster_candidates(&[49, 97, 145], &[8, 8, 8], &GapOptions::default());
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn first_se_rule_merges_evenly_spaced_groups() {
        let opts = GapOptions {
            rule: GapRule::FirstSe,
            ..Default::default()
        };
        let (c, rep) = cluster_candidates(&[49, 97, 145], &[8, 8, 8], &opts);
        assert_eq!(c.len(), 1);
        let rep = rep.unwrap();
        assert!(rep.gap[2] > rep.gap[0] + 1.0);
    }
}
