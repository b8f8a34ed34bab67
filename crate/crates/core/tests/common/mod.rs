//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use apollo::avm::{AvmProgram, GlobalValue, MvmBackend, Simulator, Stats, Vm};
use apollo::codegen;
use apollo::format::tensor_source;
use apollo::frontend::analyze;
use apollo::tensor::{DenseTensor, Shape};
use proptest::prelude::*;

/// Relative tolerance for compiled results against the oracle.
pub const REL_TOL: f64 = 1e-9;

pub fn compile(src: &str) -> AvmProgram {
    let program = analyze(src).unwrap_or_else(|d| panic!("{d}\n--- source ---\n{src}"));
    codegen::generate(&program)
}

/// Compiles and runs `src` in poison mode, so any read of an unwritten heap
/// word fails the test.
pub fn execute(src: &str) -> (Vec<(String, GlobalValue)>, Stats) {
    execute_with(src, Simulator::default())
}

pub fn execute_with<B: MvmBackend>(src: &str, backend: B) -> (Vec<(String, GlobalValue)>, Stats) {
    let program = compile(src);
    let mut vm = Vm::load(&program, backend, true).expect("load");
    let stats = vm
        .run()
        .unwrap_or_else(|t| panic!("{t}\n--- source ---\n{src}"));
    (vm.global_values().expect("globals"), stats)
}

/// Value of the last declared global, as a tensor.
pub fn last_tensor(src: &str) -> (DenseTensor, Stats) {
    let (globals, stats) = execute(src);
    match globals.into_iter().last().expect("a global").1 {
        GlobalValue::Tensor(t) => (t, stats),
        other => panic!("expected a tensor, got {other:?}"),
    }
}

/// `let tensor A = ...; let tensor B = ...; let tensor R = A <op> B;`
pub fn binary_program(a: &DenseTensor, op: &str, b: &DenseTensor) -> String {
    format!(
        "let tensor A = {};\nlet tensor B = {};\nlet tensor R = A {op} B;\n",
        tensor_source(a),
        tensor_source(b)
    )
}

/// Asserts `got ≈ want` under `max |got - want| <= tol · max(1, max |want|)`.
pub fn assert_close(got: &DenseTensor, want: &DenseTensor, tol: f64) {
    assert!(
        apollo::tensor::approx_equal(got, want, tol),
        "got {got:?}\nwant {want:?}"
    );
}

/// Row-major multi-index enumeration, written out by hand so that the test
/// oracles do not share index arithmetic with the library.
pub fn indices(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &d in dims {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..d).map(move |i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }
    out
}

fn offset(index: &[usize], dims: &[usize]) -> usize {
    let mut off = 0;
    let mut stride = 1;
    for k in (0..dims.len()).rev() {
        off += index[k] * stride;
        stride *= dims[k];
    }
    off
}

pub fn at(t: &DenseTensor, index: &[usize]) -> f64 {
    t.data()[offset(index, t.dims())]
}

/// Nested-loop dot product: for every output index, sum over the contracted
/// index. Independent of the fiber-pairing code in the library.
pub fn brute_dot(x: &DenseTensor, y: &DenseTensor) -> DenseTensor {
    let (xd, yd) = (x.dims(), y.dims());
    let c = if yd.len() == 1 { 0 } else { yd.len() - 2 };
    let k_len = xd[xd.len() - 1];
    assert_eq!(k_len, yd[c]);
    let y_free: Vec<usize> = (0..yd.len()).filter(|&k| k != c).collect();
    let mut out_dims: Vec<usize> = xd[..xd.len() - 1].to_vec();
    out_dims.extend(y_free.iter().map(|&k| yd[k]));
    let mut data = Vec::new();
    for idx in indices(&out_dims) {
        let (xi, yi) = idx.split_at(xd.len() - 1);
        let mut sum = 0.0;
        for k in 0..k_len {
            let mut xfull = xi.to_vec();
            xfull.push(k);
            let mut yfull = vec![0; yd.len()];
            for (slot, &mode) in y_free.iter().enumerate() {
                yfull[mode] = yi[slot];
            }
            yfull[c] = k;
            sum += at(x, &xfull) * at(y, &yfull);
        }
        data.push(sum);
    }
    if out_dims.is_empty() {
        DenseTensor::scalar(data[0])
    } else {
        DenseTensor::from_dims(&out_dims, data)
    }
}

/// Backend that answers every `mvmul` with the reference dot product.
pub struct OracleBackend;

impl MvmBackend for OracleBackend {
    fn mvmul(&self, a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<Vec<f64>, usize> {
        let m = DenseTensor::from_dims(&[rows, cols], a.to_vec());
        let v = DenseTensor::vector(b.to_vec());
        Ok(apollo::tensor::dot(&m, &v)
            .expect("conformable")
            .into_data())
    }
}

/// Values in [-10, 10], rounded to two decimals and with a share of exact
/// zeros so that literals exercise sparse storage.
pub fn value() -> impl Strategy<Value = f64> {
    prop_oneof![
        1 => Just(0.0),
        4 => (-1000i32..=1000).prop_map(|v| f64::from(v) / 100.0),
    ]
}

pub fn tensor_of(dims: Vec<usize>) -> impl Strategy<Value = DenseTensor> {
    let n: usize = dims.iter().product();
    prop::collection::vec(value(), n).prop_map(move |data| DenseTensor::from_dims(&dims, data))
}

pub fn dims(
    rank: std::ops::RangeInclusive<usize>,
    max_extent: usize,
) -> impl Strategy<Value = Vec<usize>> {
    rank.prop_flat_map(move |r| prop::collection::vec(1..=max_extent, r))
}

pub fn tensor(
    rank: std::ops::RangeInclusive<usize>,
    max_extent: usize,
) -> impl Strategy<Value = DenseTensor> {
    dims(rank, max_extent).prop_flat_map(tensor_of)
}

/// A pair of tensors for which `x · y` is defined.
pub fn dot_pair(
    x_rank: std::ops::RangeInclusive<usize>,
    y_rank: std::ops::RangeInclusive<usize>,
    max_extent: usize,
) -> impl Strategy<Value = (DenseTensor, DenseTensor)> {
    (dims(x_rank, max_extent), dims(y_rank, max_extent)).prop_flat_map(|(xd, mut yd)| {
        let c = if yd.len() == 1 { 0 } else { yd.len() - 2 };
        yd[c] = *xd.last().unwrap();
        (tensor_of(xd), tensor_of(yd))
    })
}

pub fn shape(dims: &[usize]) -> Shape {
    Shape::new(dims.to_vec()).unwrap()
}
