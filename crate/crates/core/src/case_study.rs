//! Paraphrase probe of the implicit reasoning space.
//!
//! For a handful of base queries we generate meaning-preserving paraphrase
//! variants, push each through the trained generator, and keep the first
//! continuation vector. If the generator encodes meaning rather than
//! surface form, variants of the same query should cluster tighter than
//! the clusters sit apart. Dispersion is measured on the raw vectors;
//! the 2-D projection exists only to make the plot file.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Config;
use crate::datasets::{coinflip_variants, Example};
use crate::error::{Error, Result};
use crate::generator::ImplicitGenerator;
use crate::run::{RunDir, RunLogger};
use crate::tokenizer::Tokenizer;
use crate::training::PipelineArtifacts;

/// Paraphrase set for one base query. All variants provably share the
/// base query's answer.
#[derive(Debug, Clone, Serialize)]
pub struct VariantSet {
    pub base_query_id: String,
    pub variants: Vec<String>,
    /// "template-based" for the built-in paraphraser; "external-client"
    /// when a remote service produced the variants.
    pub provenance: String,
}

/// Default number of paraphrases per base query.
pub const VARIANTS_PER_QUERY: usize = 20;

/// Build a variant set with the deterministic template paraphraser.
/// Every candidate is re-parsed and must preserve the flip pattern;
/// duplicates are rejected and regenerated.
pub fn make_variants(ex: &Example, n: usize, rng: &mut impl rand::Rng) -> Result<VariantSet> {
    let variants = coinflip_variants(ex, n, rng)?;
    Ok(VariantSet {
        base_query_id: ex.id.clone(),
        variants,
        provenance: "template-based".into(),
    })
}

/// Run every variant through the generator and keep the first
/// continuation vector. Returns the stacked matrix and one base-query
/// label per row.
pub fn collect_first_tokens(
    gen: &ImplicitGenerator,
    tok_small: &Tokenizer,
    sets: &[VariantSet],
    k: usize,
) -> (Array2<f64>, Vec<String>) {
    let total: usize = sets.iter().map(|s| s.variants.len()).sum();
    let mut out = Array2::zeros((total, gen.d_target));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for set in sets {
        for v in &set.variants {
            let ids = tok_small.encode(v);
            let z = gen.implicit_vectors(&ids, k);
            out.row_mut(row).assign(&z.row(0));
            labels.push(set.base_query_id.clone());
            row += 1;
        }
    }
    (out, labels)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns), sorted by descending
/// eigenvalue. Converges when the off-diagonal Frobenius norm drops
/// below 1e-12, capped at 100 sweeps.
pub fn jacobi_eigh(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let d = a.nrows();
    assert_eq!(d, a.ncols(), "matrix must be square");
    let mut m = a.clone();
    let mut v = Array2::eye(d);
    for _ in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| (0..d).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]] * m[[p, q]])
            .sum();
        if off.sqrt() < 1e-12 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let mip = m[[i, p]];
                    let miq = m[[i, q]];
                    m[[i, p]] = c * mip - s * miq;
                    m[[i, q]] = s * mip + c * miq;
                }
                for j in 0..d {
                    let mpj = m[[p, j]];
                    let mqj = m[[q, j]];
                    m[[p, j]] = c * mpj - s * mqj;
                    m[[q, j]] = s * mpj + c * mqj;
                }
                for i in 0..d {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap());
    let vals = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vecs = Array2::zeros((d, d));
    for (new, &old) in order.iter().enumerate() {
        for i in 0..d {
            vecs[[i, new]] = v[[i, old]];
        }
    }
    (vals, vecs)
}

/// Mean-centered projection onto the top two principal axes.
#[derive(Debug, Clone)]
pub struct Pca2d {
    /// n x 2 coordinates; the second column is zero under the 1-D fallback.
    pub coords: Array2<f64>,
    /// Fraction of total variance carried by each kept axis.
    pub explained: [f64; 2],
    /// True when the spectrum had fewer than two usable directions.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

/// PCA to two dimensions with a fixed sign convention: each axis is
/// flipped so its largest-magnitude loading is positive, which makes the
/// plot file reproducible. A spectrum with fewer than two usable
/// directions degrades to one axis (or none) with a warning.
pub fn pca_2d(data: &Array2<f64>) -> Result<Pca2d> {
    let n = data.nrows();
    let d = data.ncols();
    if n < 3 {
        return Err(Error::InvalidArgument {
            op: "pca_2d",
            detail: format!("projection needs at least 3 points, got {n}"),
        });
    }
    let mean = data.mean_axis(ndarray::Axis(0)).unwrap();
    let centered = data - &mean.broadcast((n, d)).unwrap();
    let cov = centered.t().dot(&centered) / n as f64;
    let (vals, vecs) = jacobi_eigh(&cov);
    let total: f64 = vals.iter().sum();

    let mut warnings = Vec::new();
    let mut coords = Array2::zeros((n, 2));
    let mut explained = [0.0, 0.0];
    let usable = |lambda: f64| lambda > 1e-12 && lambda > vals[0] * 1e-12;
    let rank2 = usable(vals[0]) && vals.len() > 1 && usable(vals[1]);
    let rank1 = usable(vals[0]);
    let degenerate = !rank2;
    if !rank1 {
        warnings.push("degenerate spectrum: no variance; coordinates are all zero".into());
        return Ok(Pca2d {
            coords,
            explained,
            degenerate,
            warnings,
        });
    }
    let kept = if rank2 { 2 } else { 1 };
    if !rank2 {
        warnings.push("degenerate spectrum: rank below 2, projecting to one axis".into());
    }
    for axis in 0..kept {
        let mut v: Array1<f64> = vecs.column(axis).to_owned();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if v[lead] < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        let proj = centered.dot(&v);
        coords.column_mut(axis).assign(&proj);
        explained[axis] = vals[axis] / total;
    }
    Ok(Pca2d {
        coords,
        explained,
        degenerate,
        warnings,
    })
}

/// Cluster-spread summary over labeled points.
#[derive(Debug, Clone, Serialize)]
pub struct DispersionReport {
    pub method: String,
    /// Mean over clusters of the mean pairwise distance inside each.
    pub within: f64,
    /// Mean pairwise distance between cluster centroids.
    pub between: f64,
    /// within / between; 0 when clusters are internally collapsed.
    pub ratio: f64,
    pub per_cluster_within: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

fn euclid(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Within/between dispersion on raw vectors. Clusters with a single
/// point carry no spread information and are excluded with a warning.
/// Coincident centroids leave the ratio undefined, which is an error.
pub fn dispersion(
    points: &Array2<f64>,
    labels: &[String],
    method: &str,
) -> Result<DispersionReport> {
    if points.nrows() != labels.len() {
        return Err(Error::InvalidArgument {
            op: "dispersion",
            detail: format!("{} points but {} labels", points.nrows(), labels.len()),
        });
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    let mut warnings = Vec::new();
    let mut per_cluster = BTreeMap::new();
    let mut centroids: Vec<Array1<f64>> = Vec::new();
    for (label, idx) in &groups {
        if idx.len() < 2 {
            warnings.push(format!("cluster '{label}' has one point; excluded"));
            continue;
        }
        let mut dists = Vec::new();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                dists.push(euclid(points.row(i), points.row(j)));
            }
        }
        let mean_within = dists.iter().sum::<f64>() / dists.len() as f64;
        per_cluster.insert(label.to_string(), mean_within);
        let mut c = Array1::zeros(points.ncols());
        for &i in idx {
            c = c + points.row(i);
        }
        centroids.push(c / idx.len() as f64);
    }
    if centroids.len() < 2 {
        return Err(Error::data(format!(
            "dispersion needs at least 2 clusters with 2+ points, got {}",
            centroids.len()
        )));
    }
    let within = per_cluster.values().sum::<f64>() / per_cluster.len() as f64;
    let mut pair_dists = Vec::new();
    for (a, ca) in centroids.iter().enumerate() {
        for cb in &centroids[a + 1..] {
            pair_dists.push(euclid(ca.view(), cb.view()));
        }
    }
    let between = pair_dists.iter().sum::<f64>() / pair_dists.len() as f64;
    if between < 1e-12 {
        return Err(Error::data(
            "all cluster centroids coincide; within/between is undefined",
        ));
    }
    Ok(DispersionReport {
        method: method.to_string(),
        within,
        between,
        ratio: within / between,
        per_cluster_within: per_cluster,
        warnings,
    })
}

/// Everything the probe produces for one trained model.
#[derive(Debug)]
pub struct CaseStudyOutcome {
    pub sets: Vec<VariantSet>,
    pub labels: Vec<String>,
    pub pca: Pca2d,
    pub report: DispersionReport,
}

/// Pick base queries, expand variants, embed, project, and measure.
/// When `run` is given, writes `case_study.csv` (plot points) and
/// `case_study.json` (dispersion report plus provenance).
pub fn run_case_study(
    cfg: &Config,
    arts: &PipelineArtifacts,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
    n_queries: usize,
    variants_per_query: usize,
) -> Result<CaseStudyOutcome> {
    let mut bases: Vec<&Example> = arts
        .splits
        .test
        .iter()
        .chain(arts.splits.train.iter())
        .filter(|e| e.domain == "coinflip")
        .take(n_queries)
        .collect();
    if bases.len() < n_queries {
        return Err(Error::data(format!(
            "need {n_queries} coinflip queries for the probe, found {}",
            bases.len()
        )));
    }
    bases.sort_by(|a, b| a.id.cmp(&b.id));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(10);
    let mut sets = Vec::with_capacity(bases.len());
    for ex in &bases {
        sets.push(make_variants(ex, variants_per_query, &mut rng)?);
    }

    let k = cfg.generator.k_eval.max(1);
    let (matrix, labels) = collect_first_tokens(&arts.generator, &arts.tok_small, &sets, k);
    let pca = pca_2d(&matrix)?;
    for w in &pca.warnings {
        logger.event("warning", serde_json::json!({"source": "pca", "message": w}));
    }
    let report = dispersion(&matrix, &labels, "implicit")?;
    for w in &report.warnings {
        logger.event("warning", serde_json::json!({"source": "dispersion", "message": w}));
    }
    logger.metric(serde_json::json!({
        "phase": "case_study",
        "within": report.within,
        "between": report.between,
        "ratio": report.ratio,
        "n_points": labels.len(),
    }));

    if let Some(r) = run {
        let mut csv = String::from("x,y,base_query_id,method\n");
        for (i, label) in labels.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                pca.coords[[i, 0]],
                pca.coords[[i, 1]],
                label,
                report.method
            ));
        }
        let csv_path = r.root.join("case_study.csv");
        std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
        let json = serde_json::json!({
            "dispersion": report,
            "explained_variance": pca.explained,
            "pca_degenerate": pca.degenerate,
            "sets": sets,
            "k": k,
        });
        r.write_json("case_study.json", &json)?;
    }
    logger.flush();
    Ok(CaseStudyOutcome {
        sets,
        labels,
        pca,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn jacobi_recovers_eigenpairs_of_a_symmetric_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 5;
        let mut a = Array2::zeros((d, d));
        for i in 0..d {
            for j in i..d {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        let (vals, vecs) = jacobi_eigh(&a);
        for k in 0..d {
            let v = vecs.column(k);
            let av = a.dot(&v);
            for i in 0..d {
                assert!((av[i] - vals[k] * v[i]).abs() < 1e-9, "eigenpair {k} fails");
            }
        }
        // columns orthonormal
        let gram = vecs.t().dot(&vecs);
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-9);
            }
        }
        // descending order
        for k in 1..d {
            assert!(vals[k - 1] >= vals[k]);
        }
    }

    #[test]
    fn planar_cloud_reconstructs_exactly() {
        // points on a 2-D plane embedded in 6 dimensions
        let e1 = array![0.5, 0.5, 0.5, 0.5, 0.0, 0.0];
        let e2 = array![0.5, -0.5, 0.5, -0.5, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        let mut data = Array2::zeros((n, 6));
        for i in 0..n {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(-3.0..3.0);
            let p = &e1 * a + &e2 * b;
            data.row_mut(i).assign(&(p + 7.0));
        }
        let pca = pca_2d(&data).unwrap();
        assert!(!pca.degenerate);
        assert!((pca.explained[0] + pca.explained[1] - 1.0).abs() < 1e-9);

        // distances survive the projection because the cloud is planar
        for i in 0..n {
            for j in 0..n {
                let orig = euclid(data.row(i), data.row(j));
                let proj = euclid(pca.coords.row(i), pca.coords.row(j));
                assert!((orig - proj).abs() < 1e-6, "pair ({i},{j})");
            }
        }
    }

    #[test]
    fn isotropic_cloud_splits_variance_evenly() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d) = (4000, 8);
        let mut data = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                data[[i, j]] = StandardNormal.sample(&mut rng);
            }
        }
        let pca = pca_2d(&data).unwrap();
        let top2 = pca.explained[0] + pca.explained[1];
        let ideal = 2.0 / d as f64;
        assert!(
            (top2 - ideal).abs() < 0.04,
            "top-2 explained {top2} far from {ideal}"
        );
    }

    #[test]
    fn duplicate_rows_are_degenerate() {
        let data = Array2::from_elem((5, 4), 3.5);
        let pca = pca_2d(&data).unwrap();
        assert!(pca.degenerate);
        assert!(!pca.warnings.is_empty());
        assert_eq!(pca.explained, [0.0, 0.0]);
    }

    #[test]
    fn rank_one_cloud_falls_back_to_one_axis() {
        let mut data = Array2::zeros((6, 4));
        for i in 0..6 {
            data[[i, 1]] = i as f64;
        }
        let pca = pca_2d(&data).unwrap();
        assert!(pca.degenerate);
        for i in 0..6 {
            assert_eq!(pca.coords[[i, 1]], 0.0);
        }
        // the single kept axis still orders the points
        for i in 1..6 {
            assert!(pca.coords[[i, 0]] > pca.coords[[i - 1, 0]]);
        }
    }

    #[test]
    fn four_point_dispersion_matches_hand_computation() {
        let points = array![[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]];
        let labels: Vec<String> = vec!["a".into(), "a".into(), "b".into(), "b".into()];
        let rep = dispersion(&points, &labels, "implicit").unwrap();
        assert!((rep.within - 2.0).abs() < 1e-9);
        assert!((rep.between - 10.0).abs() < 1e-9);
        assert!((rep.ratio - 0.2).abs() < 1e-9);
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn singleton_clusters_are_excluded_with_warning() {
        let points = array![[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0], [50.0, 50.0]];
        let labels: Vec<String> =
            vec!["a".into(), "a".into(), "b".into(), "b".into(), "c".into()];
        let rep = dispersion(&points, &labels, "implicit").unwrap();
        assert_eq!(rep.warnings.len(), 1);
        assert!((rep.between - 10.0).abs() < 1e-9, "singleton must not join centroids");
    }

    #[test]
    fn coincident_centroids_are_an_error() {
        let points = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let labels: Vec<String> = vec!["a".into(), "a".into(), "b".into(), "b".into()];
        assert!(dispersion(&points, &labels, "implicit").is_err());
    }

    #[test]
    fn collapsed_clusters_give_zero_ratio() {
        let points = array![[0.0, 0.0], [0.0, 0.0], [9.0, 0.0], [9.0, 0.0]];
        let labels: Vec<String> = vec!["a".into(), "a".into(), "b".into(), "b".into()];
        let rep = dispersion(&points, &labels, "implicit").unwrap();
        assert_eq!(rep.within, 0.0);
        assert_eq!(rep.ratio, 0.0);
    }

    #[test]
    fn variants_are_unique_verified_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ex = crate::datasets::gen_coinflip(1, 3, &mut rng).remove(0);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let set1 = make_variants(&ex, 20, &mut r1).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let set2 = make_variants(&ex, 20, &mut r2).unwrap();
        assert_eq!(set1.variants, set2.variants);
        assert_eq!(set1.variants.len(), 20);
        assert_eq!(set1.provenance, "template-based");
        let unique: std::collections::HashSet<&String> = set1.variants.iter().collect();
        assert_eq!(unique.len(), 20);
    }

    #[test]
    fn first_token_matrix_is_labeled_and_deterministic() {
        use crate::model::{LmConfig, TinyLm};
        let tok = crate::datasets::task_tokenizer();
        let mut tok_small = tok.clone();
        tok_small.add_special(crate::tokenizer::COT_TOKEN);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let small = TinyLm::new(
            LmConfig {
                vocab_size: tok.vocab_size(),
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                max_seq_len: 64,
            },
            &mut rng,
        )
        .unwrap();
        let gen = ImplicitGenerator::new(small, 12, &mut rng);
        let sets = vec![
            VariantSet {
                base_query_id: "q0".into(),
                variants: vec!["a coin is heads up .".into(); 3],
                provenance: "template-based".into(),
            },
            VariantSet {
                base_query_id: "q1".into(),
                variants: vec!["the coin starts heads up .".into(); 2],
                provenance: "template-based".into(),
            },
        ];
        let (m1, l1) = collect_first_tokens(&gen, &tok_small, &sets, 2);
        let (m2, _) = collect_first_tokens(&gen, &tok_small, &sets, 2);
        assert_eq!(m1, m2);
        assert_eq!(m1.nrows(), 5);
        assert_eq!(m1.ncols(), 12);
        assert_eq!(l1, vec!["q0", "q0", "q0", "q1", "q1"]);
    }
}
