//! Reference-table arithmetic checks and kernel timings.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::ols;
use crate::geometry::discrete_frechet;
use crate::nn::{biased_self_attention, gcn_layer, Activation, Graph};
use crate::plgm::{random_detections, refine, RefinementConfig};
use crate::scene::Point3;
use crate::Matrix;

/// One published result row: `[DET_l, DET_t, TOP_ll, TOP_lt]` and the
/// printed OLS, `None` where the table has a dash.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableRow {
    pub subset: &'static str,
    pub method: &'static str,
    pub components: [Option<f64>; 4],
    pub ols: Option<f64>,
}

const fn row(subset: &'static str, method: &'static str, c: [f64; 4], ols: f64) -> TableRow {
    TableRow { subset, method, components: [Some(c[0]), Some(c[1]), Some(c[2]), Some(c[3])], ols: Some(ols) }
}

const fn partial(subset: &'static str, method: &'static str, det_l: f64, det_t: f64) -> TableRow {
    TableRow { subset, method, components: [Some(det_l), Some(det_t), None, None], ols: None }
}

/// The OpenLane-V2 comparison table the arithmetic check runs against.
pub const REFERENCE_TABLE: [TableRow; 16] = [
    row("subset_A", "STSU", [12.7, 43.0, 2.9, 19.8], 29.3),
    row("subset_A", "VectorMapNet", [11.1, 41.7, 2.7, 9.2], 24.9),
    row("subset_A", "MapTR", [17.7, 43.5, 5.9, 15.1], 31.0),
    row("subset_A", "TopoNet", [28.6, 48.6, 10.9, 23.8], 39.8),
    row("subset_A", "TopoMLP", [28.3, 49.5, 21.6, 26.9], 44.1),
    row("subset_A", "TopoLogic", [29.9, 47.2, 23.9, 25.4], 44.1),
    row("subset_A", "TopoFormer", [34.7, 48.2, 24.1, 29.5], 46.3),
    row("subset_A", "point-lane (this crate's model)", [31.4, 55.3, 28.7, 30.0], 48.8),
    partial("subset_B", "STSU", 8.2, 43.9),
    partial("subset_B", "VectorMapNet", 3.5, 49.1),
    partial("subset_B", "MapTR", 15.2, 54.0),
    row("subset_B", "TopoNet", [24.3, 55.0, 6.7, 16.7], 36.8),
    row("subset_B", "TopoMLP", [26.6, 58.3, 21.0, 19.8], 43.8),
    row("subset_B", "TopoLogic", [25.9, 54.7, 21.6, 17.9], 42.3),
    row("subset_B", "TopoFormer", [34.8, 58.9, 23.2, 23.3], 47.5),
    row("subset_B", "point-lane (this crate's model)", [31.2, 60.2, 28.3, 27.1], 49.2),
];

/// Allowed difference between recomputed and printed OLS after rounding.
pub const TABLE_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct TableCheck {
    pub subset: &'static str,
    pub method: &'static str,
    pub printed: f64,
    pub recomputed: f64,
    pub rounded: f64,
    pub passed: bool,
}

/// Recomputes OLS for every row with all four components.
pub fn table1_arithmetic_check() -> Vec<TableCheck> {
    REFERENCE_TABLE
        .iter()
        .filter_map(|r| {
            let [Some(a), Some(b), Some(c), Some(d)] = r.components else { return None };
            let printed = r.ols?;
            let recomputed = ols(a, b, c, d).expect("table components lie in [0, 100]");
            let rounded = (recomputed * 10.0).round() / 10.0;
            Some(TableCheck {
                subset: r.subset,
                method: r.method,
                printed,
                recomputed,
                rounded,
                passed: (rounded - printed).abs() <= TABLE_TOLERANCE + 1e-9,
            })
        })
        .collect()
}

pub fn table_check_text(rows: &[TableCheck]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:<32} printed {:>5.1} recomputed {:>8.4} -> {:>5.1} {}",
            r.subset,
            r.method,
            r.printed,
            r.recomputed,
            r.rounded,
            if r.passed { "ok" } else { "MISMATCH" }
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub kernel: &'static str,
    pub dims: String,
    pub iterations: usize,
    pub mean_us: f64,
    /// Documented budget in microseconds, if any.
    pub budget_us: Option<f64>,
}

fn time_it(warmup: usize, iterations: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let t = Instant::now();
    for _ in 0..iterations {
        f();
    }
    t.elapsed().as_secs_f64() * 1e6 / iterations as f64
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn attention(n: usize, d: usize, heads: usize, iterations: usize, budget_us: Option<f64>) -> Timing {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = random(&mut rng, n, d);
    let bias = random(&mut rng, n, n);
    let mean_us = time_it(1, iterations, || {
        let mut g = Graph::new();
        let (qv, bv) = (g.input(q.clone()), g.input(bias.clone()));
        let out = biased_self_attention(&mut g, qv, bv, heads).expect("valid shapes");
        std::hint::black_box(g.value(out));
    });
    Timing { kernel: "plmsa_forward", dims: format!("N={n} d={d} heads={heads}"), iterations, mean_us, budget_us }
}

fn gcn(n: usize, m: usize, d: usize, iterations: usize) -> Timing {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, m, d);
    let a = random(&mut rng, n, m).map(f64::abs);
    let w = random(&mut rng, d, d);
    let mean_us = time_it(1, iterations, || {
        let mut g = Graph::new();
        let (xv, av, wv) = (g.input(x.clone()), g.input(a.clone()), g.input(w.clone()));
        let out = gcn_layer(&mut g, xv, av, wv, Activation::Relu).expect("valid shapes");
        std::hint::black_box(g.value(out));
    });
    Timing { kernel: "gcn_forward", dims: format!("{n}x{m} d={d}"), iterations, mean_us, budget_us: None }
}

fn frechet(k: usize, iterations: usize) -> Timing {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut line = || -> Vec<Point3> {
        (0..k).map(|i| [i as f64 + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0]).collect()
    };
    let (a, b) = (line(), line());
    let mean_us = time_it(100, iterations, || {
        std::hint::black_box(discrete_frechet(std::hint::black_box(&a), &b).expect("non-empty"));
    });
    Timing { kernel: "frechet_pair", dims: format!("k={k}"), iterations, mean_us, budget_us: Some(10.0) }
}

fn plgm(n_p: usize, n_l: usize, iterations: usize) -> Timing {
    let d = random_detections(4, n_p, n_l, 100.0);
    let cfg = RefinementConfig::default();
    let mean_us = time_it(2, iterations, || {
        std::hint::black_box(refine(&d, &cfg));
    });
    Timing { kernel: "plgm_refine", dims: format!("N_p={n_p} N_l={n_l}"), iterations, mean_us, budget_us: Some(5000.0) }
}

/// Times the main kernels at desk scale and at the published model scale.
/// `quick` lowers iteration counts for smoke runs.
pub fn bench_kernels(quick: bool) -> Vec<Timing> {
    let n = |full: usize| if quick { 1.max(full / 10) } else { full };
    vec![
        attention(104, 32, 1, n(50), None),
        attention(500, 256, 1, n(5), Some(100_000.0)),
        gcn(40, 60, 32, n(200)),
        gcn(200, 300, 256, n(10)),
        frechet(11, n(20_000)),
        plgm(40, 60, n(500)),
        plgm(200, 300, n(100)),
    ]
}

pub const TIMING_CSV_HEADER: &str = "kernel,dims,iterations,mean_us,budget_us,within_budget";

pub fn timings_csv(rows: &[Timing]) -> String {
    let mut s = String::from(TIMING_CSV_HEADER);
    s.push('\n');
    for t in rows {
        let (budget, ok) = match t.budget_us {
            Some(b) => (b.to_string(), (t.mean_us <= b).to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(s, "{},{},{},{:.3},{budget},{ok}", t.kernel, t.dims, t.iterations, t.mean_us);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows_with_all_components_are_checked() {
        let rows = table1_arithmetic_check();
        assert_eq!(rows.len(), 13);
        let top = rows.iter().find(|r| r.subset == "subset_A" && r.printed == 48.8).unwrap();
        assert!(top.passed);
        assert!(table_check_text(&rows).lines().count() == 13);
    }

    #[test]
    fn timing_csv_shape() {
        let t = vec![frechet(5, 10)];
        let csv = timings_csv(&t);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("frechet_pair,k=5,10,"));
    }
}
