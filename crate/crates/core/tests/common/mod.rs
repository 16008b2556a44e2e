#![allow(dead_code)]

use exmatch::data::{Covariate, CovariateSchema, CovariateTable, Value};
use rand::Rng;
use rand_distr::StandardNormal;

/// Mixed-type two-study table: continuous, binary and 3–4 level categorical
/// covariates; study 1 is shifted by `shift` on every latent scale.
pub fn mixed_table<R: Rng>(rng: &mut R, n: [usize; 2], p: usize, shift: f64) -> CovariateTable {
    let mut covariates = Vec::with_capacity(p);
    for j in 0..p {
        covariates.push(match j % 3 {
            0 => Covariate::continuous(format!("c{j}")),
            1 => Covariate::binary(format!("b{j}")),
            _ => Covariate::categorical(
                format!("f{j}"),
                if j % 2 == 0 {
                    vec!["u", "v", "w"]
                } else {
                    vec!["u", "v", "w", "x"]
                },
            ),
        });
    }
    let schema = CovariateSchema::new(covariates).unwrap();
    let mut study = Vec::new();
    let mut values = Vec::new();
    for k in 0..2u8 {
        for _ in 0..n[k as usize] {
            let row = schema
                .covariates()
                .iter()
                .map(|c| {
                    let z: f64 = rng.sample::<f64, _>(StandardNormal) + shift * f64::from(k);
                    match &c.kind {
                        exmatch::data::CovariateKind::Continuous => Value::Number(z),
                        exmatch::data::CovariateKind::Binary { .. } => {
                            Value::Number(f64::from(u8::from(z > 0.3)))
                        }
                        exmatch::data::CovariateKind::Categorical { levels } => {
                            let cuts = [-0.6, 0.2, 0.9];
                            Value::Level(
                                cuts[..levels.len() - 1].iter().filter(|&&t| z > t).count(),
                            )
                        }
                    }
                })
                .collect();
            values.push(row);
            study.push(k);
        }
    }
    let y = (0..values.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    CovariateTable::new(schema, study, values, Some(y)).unwrap()
}

/// Continuous-only table from explicit points.
pub fn points_table(a: &[Vec<f64>], b: &[Vec<f64>]) -> CovariateTable {
    let p = a[0].len();
    let schema = CovariateSchema::new(
        (0..p)
            .map(|j| Covariate::continuous(format!("x{j}")))
            .collect(),
    )
    .unwrap();
    let mut study = Vec::new();
    let mut values = Vec::new();
    for (k, pts) in [a, b].into_iter().enumerate() {
        for pt in pts {
            values.push(pt.iter().map(|&v| Value::Number(v)).collect());
            study.push(k as u8);
        }
    }
    CovariateTable::new(schema, study, values, None).unwrap()
}

pub fn normal_points<R: Rng>(rng: &mut R, n: usize, p: usize, centre: &[f64]) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..p)
                .map(|j| centre[j] + rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Largest |Σw x / Σw| gap between the two studies over all encoded columns,
/// evaluated directly from the design matrix.
pub fn max_mean_gap(dm: &exmatch::data::DesignMatrix, w: &[Vec<f64>; 2]) -> f64 {
    let mut gap: f64 = 0.0;
    for c in 0..dm.n_cols() {
        let mean = |k: usize| {
            let x = dm.study(k as u8);
            let s: f64 = w[k].iter().sum();
            (0..x.rows()).map(|r| w[k][r] * x.get(r, c)).sum::<f64>() / s
        };
        gap = gap.max((mean(0) - mean(1)).abs());
    }
    gap
}

// ---- planar convex hull oracle ----

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise hull (monotone chain).
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0)
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

/// Whether the convex hulls of two planar point sets (≥ 3 points each, in general
/// position) intersect.
pub fn hulls_intersect(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let (ha, hb) = (convex_hull(a), convex_hull(b));
    if ha.iter().any(|&p| inside(&hb, p)) || hb.iter().any(|&p| inside(&ha, p)) {
        return true;
    }
    for i in 0..ha.len() {
        for j in 0..hb.len() {
            if segments_cross(ha[i], ha[(i + 1) % ha.len()], hb[j], hb[(j + 1) % hb.len()]) {
                return true;
            }
        }
    }
    false
}
