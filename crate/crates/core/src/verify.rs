//! Runtime self-checks exposed by the command line (`selftest`).
//!
//! These compare independent code paths inside the library; the test suites
//! hold the stronger oracles.

use crate::algebra::{cayley_dickson_table, find_zero_divisor, hyper_mul, published_table_16, HyperNumber, SignedIndexTable};
use crate::layers::{equivalent_real_param_count, hxconv_param_count, HxConv2d};
use crate::tensor::{Conv2dSpec, Prng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name, passed, detail: detail.into() }
}

/// Compares the generated 16-dimensional table with the published one.
pub fn verify_table() -> (SignedIndexTable, Vec<(usize, usize, i32, i32)>) {
    let generated = cayley_dickson_table(16).expect("16 is a valid dimension");
    let diff = generated.diff(&published_table_16());
    (generated, diff)
}

fn e(k: usize) -> HyperNumber {
    HyperNumber::unit(16, k)
}

fn mul(a: &HyperNumber, b: &HyperNumber, t: &SignedIndexTable) -> HyperNumber {
    hyper_mul(a, b, t).expect("dimensions match")
}

fn associativity_witness(t: &SignedIndexTable) -> Option<(usize, usize, usize)> {
    for i in 1..16 {
        for j in 1..16 {
            for k in 1..16 {
                let left = mul(&mul(&e(i), &e(j), t), &e(k), t);
                let right = mul(&e(i), &mul(&e(j), &e(k), t), t);
                if left.max_abs_diff(&right) > 0.0 {
                    return Some((i, j, k));
                }
            }
        }
    }
    None
}

pub fn run_selftest() -> Vec<Check> {
    let mut out = Vec::new();
    let (table, diff) = verify_table();
    out.push(check("table", diff.is_empty(), format!("{}/256 entries match", 256 - diff.len())));
    out.push(check("latin square", table.validate().is_ok(), "rows and columns are permutations"));

    let squares = (1..16).all(|k| mul(&e(k), &e(k), &table).max_abs_diff(&HyperNumber::real(16, -1.0)) == 0.0);
    out.push(check("unit squares", squares, "e_k * e_k = -1 for k = 1..15"));

    let mut anti = 0;
    for i in 1..16 {
        for j in i + 1..16 {
            if mul(&e(i), &e(j), &table).max_abs_diff(&-&mul(&e(j), &e(i), &table)) == 0.0 {
                anti += 1;
            }
        }
    }
    out.push(check("anticommutativity", anti == 105, format!("{anti}/105 pairs")));

    match find_zero_divisor(&table) {
        Some((u, v)) => {
            let zero = mul(&u, &v, &table).is_zero();
            out.push(check("zero divisor", zero && !u.is_zero() && !v.is_zero(), format!("{:?} * {:?}", u.components(), v.components())));
        }
        None => out.push(check("zero divisor", false, "none found")),
    }
    let small_free = [1, 2, 4, 8]
        .iter()
        .all(|&d| find_zero_divisor(&cayley_dickson_table(d).expect("valid dimension")).is_none());
    out.push(check("no zero divisors below 16", small_free, "dims 1, 2, 4, 8"));
    let witness = associativity_witness(&table);
    out.push(check("non-associativity", witness.is_some(), format!("{witness:?}")));

    let mut rng = Prng::new(7);
    let mut worst = 0.0f32;
    for (ci, co, k) in [(1, 2, 3), (2, 1, 1), (3, 2, 3)] {
        let spec = Conv2dSpec::new(ci, co, k, 1, k / 2);
        let layer = HxConv2d::new(spec, true, &mut rng);
        let x = Tensor::from_vec(&[2, 16 * ci, 5, 6], (0..2 * 16 * ci * 30).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .expect("sized to match");
        let fast = layer.infer(&x).expect("valid input");
        let slow = layer.infer_componentwise(&x).expect("valid input");
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    out.push(check("sedenion conv paths", worst <= 1e-4, format!("max abs diff {worst:.2e}")));

    let ratios_exact = [(1, 1, 1), (16, 16, 3), (3, 5, 3), (8, 4, 5)].iter().all(|&(ci, co, k)| {
        let spec = Conv2dSpec::new(ci, co, k, 1, 0);
        equivalent_real_param_count(&spec, false) == 16 * hxconv_param_count(&spec, false)
    });
    out.push(check("parameter ratio", ratios_exact, "real / sedenion = 16"));
    out
}
