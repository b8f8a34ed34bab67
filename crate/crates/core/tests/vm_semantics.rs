//! Instruction-level behavior of the stack machine.

mod common;

use apollo::avm::{AvmProgram, Instruction, LiteralRecord, Simulator, Stats, TrapKind, Vm, VmWord};
use apollo::bstt::BsttTensor;
use apollo::tensor::{DenseTensor, Shape};

fn program(literals: &[DenseTensor], code: &str) -> AvmProgram {
    AvmProgram {
        slots: 2,
        literals: literals
            .iter()
            .map(|t| LiteralRecord {
                shape: t.shape().clone(),
                flat: BsttTensor::from_dense(t).unwrap().flatten(),
            })
            .collect(),
        code: code
            .lines()
            .map(|l| l.parse::<Instruction>().unwrap())
            .collect(),
        ..AvmProgram::default()
    }
}

/// Runs to completion and returns the final stack, the VM's tensor view of
/// every Ref on it, and the counters.
fn run(literals: &[DenseTensor], code: &str) -> (Vec<VmWord>, Vec<Option<DenseTensor>>, Stats) {
    let p = program(literals, code);
    let mut vm = Vm::load(&p, Simulator::default(), true).unwrap();
    vm.execute().unwrap_or_else(|t| panic!("{t}"));
    let stack = vm.stack().to_vec();
    let tensors = stack
        .iter()
        .map(|w| match w {
            VmWord::Ref(_) => vm.tensor(*w).ok(),
            _ => None,
        })
        .collect();
    (stack, tensors, vm.stats())
}

fn stack(code: &str) -> Vec<VmWord> {
    run(&[], code).0
}

fn trap(literals: &[DenseTensor], code: &str) -> TrapKind {
    let p = program(literals, code);
    let mut vm = Vm::load(&p, Simulator::default(), true).unwrap();
    vm.execute().expect_err("expected a trap").kind
}

#[test]
fn push_constant_pushes_by_value() {
    assert_eq!(
        stack("push constant 7\npush constant -2.5\n"),
        [VmWord::Int(7), VmWord::Float(-2.5)]
    );
}

#[test]
fn push_and_pop_global() {
    let s = stack("push constant 5\npop global 1\npush global 1\npush global 0\n");
    assert_eq!(s, [VmWord::Int(5), VmWord::Int(0)]);
}

#[test]
fn neg_negates_top() {
    assert_eq!(stack("push constant 4\nneg\n"), [VmWord::Int(-4)]);
    assert_eq!(stack("push constant 1.5\nneg\n"), [VmWord::Float(-1.5)]);
}

#[test]
fn add_pops_b_then_a() {
    assert_eq!(
        stack("push constant 3\npush constant 4\nadd\n"),
        [VmWord::Int(7)]
    );
    assert_eq!(
        stack("push constant 0.5\npush constant 4\nadd\n"),
        [VmWord::Float(4.5)]
    );
}

#[test]
fn sub_is_a_minus_b() {
    assert_eq!(
        stack("push constant 3\npush constant 4\nsub\n"),
        [VmWord::Int(-1)]
    );
    assert_eq!(
        stack("push constant 1.0\npush constant 2.5\nsub\n"),
        [VmWord::Float(-1.5)]
    );
}

#[test]
fn mult_multiplies() {
    assert_eq!(
        stack("push constant 6\npush constant -7\nmult\n"),
        [VmWord::Int(-42)]
    );
    assert_eq!(
        stack("push constant 2\npush constant 0.25\nmult\n"),
        [VmWord::Float(0.5)]
    );
}

#[test]
fn div_is_a_over_b() {
    assert_eq!(
        stack("push constant 6\npush constant 3\ndiv\n"),
        [VmWord::Int(2)]
    );
    assert_eq!(
        stack("push constant 3.0\npush constant 6\ndiv\n"),
        [VmWord::Float(0.5)]
    );
    assert_eq!(
        trap(&[], "push constant 1\npush constant 0\ndiv\n"),
        TrapKind::DivisionByZero
    );
}

#[test]
fn arithmetic_on_a_reference_traps() {
    let t = DenseTensor::vector(vec![1.0]);
    let kind = trap(&[t], "push literal 0\npush constant 1\nadd\n");
    assert!(matches!(kind, TrapKind::Type { .. }), "{kind:?}");
}

#[test]
fn empty_stack_pop_traps() {
    assert_eq!(trap(&[], "add\n"), TrapKind::StackUnderflow);
    assert_eq!(trap(&[], "pop global 0\n"), TrapKind::StackUnderflow);
}

#[test]
fn mvmul_rotates_a_basis_vector() {
    let a = DenseTensor::matrix(&[&[0.0, -1.0], &[1.0, 0.0]]);
    let b = DenseTensor::vector(vec![1.0, 0.0]);
    let (s, tensors, stats) = run(&[a, b], "push literal 0\npush literal 1\nmvmul\n");
    assert_eq!(s.len(), 1);
    assert_eq!(
        tensors[0].as_ref().unwrap(),
        &DenseTensor::vector(vec![0.0, 1.0])
    );
    assert_eq!(stats.mvmul_count, 1);
    assert_eq!(stats.host_ops, 2);
}

#[test]
fn mvmul_shape_mismatch_traps() {
    let a = DenseTensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let b = DenseTensor::vector(vec![1.0, 2.0, 3.0]);
    let kind = trap(&[a, b], "push literal 0\npush literal 1\nmvmul\n");
    assert!(matches!(kind, TrapKind::Dimension(_)), "{kind:?}");
    let kind = trap(&[], "push constant 1\npush constant 2\nmvmul\n");
    assert!(matches!(kind, TrapKind::Type { .. }), "{kind:?}");
}

#[test]
fn accelerator_cap_rejects_large_operands() {
    let a = DenseTensor::identity(3);
    let b = DenseTensor::vector(vec![1.0, 2.0, 3.0]);
    let p = program(&[a, b], "push literal 0\npush literal 1\nmvmul\n");
    let mut vm = Vm::load(&p, Simulator::with_max_dim(2), false).unwrap();
    let t = vm.execute().unwrap_err();
    assert!(
        matches!(t.kind, TrapKind::AcceleratorLimit { max: 2, .. }),
        "{t}"
    );
    assert_eq!(t.pc, 2);
    assert_eq!(t.instruction, "mvmul");
}

// The allocation fragment: push the size, then call malloc with one argument.
#[test]
fn malloc_fragment() {
    let p = program(&[], "push constant 3\ncall malloc 1\n");
    let mut vm = Vm::load(&p, Simulator::default(), false).unwrap();
    vm.execute().unwrap();
    let addr = match vm.stack() {
        [VmWord::Ref(a)] => *a,
        other => panic!("{other:?}"),
    };
    assert!(vm.heap().is_live(addr, 3));
    for k in 0..3 {
        assert_eq!(vm.heap().read(addr + k).unwrap(), VmWord::Int(0));
    }
    assert_eq!(vm.stats().heap_words, 3);
}

#[test]
fn mallocs_are_disjoint_and_size_must_be_positive() {
    let (s, _, _) = run(
        &[],
        "push constant 2\ncall malloc 1\npush constant 2\ncall malloc 1\n",
    );
    let (VmWord::Ref(a), VmWord::Ref(b)) = (s[0], s[1]) else {
        panic!("{s:?}")
    };
    assert!(a + 2 <= b || b + 2 <= a);
    assert!(matches!(
        trap(&[], "push constant 0\ncall malloc 1\n"),
        TrapKind::BadArgument(_)
    ));
}

#[test]
fn pointer_reanchors_this() {
    let code = "\
push constant 2
call malloc 1
pop global 0
push constant 2
call malloc 1
pop global 1
push global 0
pop pointer 0
push constant 11
pop this 1
push global 1
pop pointer 0
push constant 22
pop this 1
push this 1
push global 0
pop pointer 0
push this 1
";
    let s = stack(code);
    assert_eq!(s, [VmWord::Int(22), VmWord::Int(11)]);
}

#[test]
fn this_addresses_tensor_records_from_the_header() {
    let t = DenseTensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
    // [rank, d0, d1, payload...]
    let s = stack_with(
        std::slice::from_ref(&t),
        "push literal 0\npop pointer 0\npush this 0\npush this 2\npush this 6\n",
    );
    assert_eq!(s, [VmWord::Int(2), VmWord::Int(2), VmWord::Float(4.0)]);
    assert!(matches!(
        trap(
            &[t],
            "push literal 0\npop pointer 0\npush constant 5\npop this 1\n"
        ),
        TrapKind::HeaderWrite { .. }
    ));
}

fn stack_with(literals: &[DenseTensor], code: &str) -> Vec<VmWord> {
    run(literals, code).0
}

fn sample_literal() -> DenseTensor {
    #[rustfmt::skip]
    let data = vec![
        0.1, 0., 0., 0., 0.,
        8.0, 9.9, 4.4, 0., 0.,
        0., 0., 0., 0., 0.,
        3.1, 0., 0., 0.9, 0.,
        0., 0., 0., 0., 1.3,
        0., 0., 0., 0., 0.,
    ];
    DenseTensor::from_dims(&[2, 3, 5], data)
}

#[test]
fn load_materialises_the_sample_literal() {
    let sample = sample_literal();
    let p = program(std::slice::from_ref(&sample), "");
    assert_eq!(p.literals[0].flat.entries.len(), 20);
    let vm = Vm::load(&p, Simulator::default(), true).unwrap();
    let header = 1 + 3;
    assert_eq!(vm.heap().len(), header + 30);
    let loaded = vm.tensor(VmWord::Ref(0)).unwrap();
    assert_eq!(loaded, sample);
    assert_eq!(loaded.data().iter().filter(|v| **v != 0.0).count(), 7);
}

#[test]
fn empty_program_leaves_an_empty_heap() {
    let p = AvmProgram::default();
    let mut vm = Vm::load(&p, Simulator::default(), false).unwrap();
    assert!(vm.is_finished());
    let stats = vm.run().unwrap();
    assert!(vm.heap().is_empty());
    assert_eq!(stats, Stats::default());
}

#[test]
fn identical_literals_are_separate_records() {
    let t = DenseTensor::vector(vec![1.0, 2.0]);
    let (s, tensors, _) = run(&[t.clone(), t.clone()], "push literal 0\npush literal 1\n");
    assert_ne!(s[0], s[1]);
    assert_eq!(tensors[0].as_ref(), Some(&t));
    assert_eq!(tensors[1].as_ref(), Some(&t));
}

#[test]
fn fiber_of_sample_literal() {
    let (_, tensors, _) = run(
        &[sample_literal()],
        "push literal 0\npush constant 1\ncall fiber 2\n",
    );
    assert_eq!(
        tensors[0].as_ref().unwrap().data(),
        &[8.0, 9.9, 4.4, 0.0, 0.0]
    );
}

#[test]
fn diag_builds_lambda_identity() {
    let (_, tensors, _) = run(&[], "push constant 2.0\npush constant 2\ncall diag 2\n");
    assert_eq!(
        tensors[0].as_ref().unwrap(),
        &DenseTensor::matrix(&[&[2.0, 0.0], &[0.0, 2.0]])
    );
}

#[test]
fn crossmat_then_mvmul_is_the_cross_product() {
    let u = DenseTensor::vector(vec![1.0, 2.0, 3.0]);
    let v = DenseTensor::vector(vec![4.0, 5.0, 6.0]);
    let (_, tensors, stats) = run(
        &[u, v],
        "push literal 0\ncall crossmat 1\npush literal 1\nmvmul\n",
    );
    assert_eq!(tensors[0].as_ref().unwrap().data(), &[-3.0, 6.0, -3.0]);
    assert_eq!(stats.mvmul_count, 1);
}

#[test]
fn alloc_and_writefiber_assemble_a_tensor() {
    let row = DenseTensor::vector(vec![5.0, 6.0]);
    let code = "\
push constant 2
push constant 2
push constant 2
call alloc_tensor 3
push constant 1
push literal 0
call writefiber 3
push constant 0
push literal 0
call writefiber 3
";
    let (_, tensors, _) = run(&[row], code);
    assert_eq!(
        tensors[0].as_ref().unwrap(),
        &DenseTensor::matrix(&[&[5.0, 6.0], &[5.0, 6.0]])
    );
}

#[test]
fn poison_mode_traps_on_unwritten_reads() {
    let code =
        "push constant 1\npush constant 2\ncall alloc_tensor 2\npush constant 0\ncall fiber 2\n";
    assert!(matches!(trap(&[], code), TrapKind::Unwritten { .. }));
    let p = program(&[], code);
    let mut vm = Vm::load(&p, Simulator::default(), false).unwrap();
    vm.execute().unwrap();
}

#[test]
fn run_requires_a_balanced_stack() {
    let p = program(&[], "push constant 1\n");
    let mut vm = Vm::load(&p, Simulator::default(), false).unwrap();
    let t = vm.run().unwrap_err();
    assert_eq!(t.kind, TrapKind::UnbalancedStack { depth: 1 });
}

#[test]
fn identical_programs_give_identical_states() {
    let src = "let tensor A = {{1, 2}, {3, 4}};\nlet tensor B = A & {{1, -1}};\nlet float s = A * {1, 1} * {2, 0.5};\n";
    let a = common::execute(src);
    let b = common::execute(src);
    assert_eq!(a, b);
}

#[test]
fn shape_is_checked_on_load() {
    let mut p = program(&[DenseTensor::vector(vec![1.0, 2.0])], "");
    p.literals[0].shape = Shape::new(vec![1]).unwrap();
    assert!(Vm::load(&p, Simulator::default(), false).is_err());
}
