use super::*;
use crate::rng::Rng;

fn t(shape: &[usize], vals: &[f64]) -> Tensor {
    Tensor::from_vec(shape.to_vec(), vals.to_vec()).unwrap()
}

#[test]
fn softmax_uniform_on_equal_logits() {
    let z = t(&[1, 3], &[0.0, 0.0, 0.0]);
    let s = z.softmax_rows(None).unwrap();
    for v in s.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_survives_overflow_range_inputs() {
    // Row-max subtraction turns [1000, 1000 + ln 2] into [-ln 2, 0].
    let z = t(&[1, 2], &[1000.0, 1000.0 + 2f64.ln()]);
    let s = z.softmax_rows(None).unwrap();
    assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn softmax_mask_excludes_entries() {
    let z = t(&[1, 2], &[1.0, 2.0]);
    let mask = t(&[1, 2], &[f64::NEG_INFINITY, 0.0]);
    let s = z.softmax_rows(Some(&mask)).unwrap();
    assert_eq!(s.data(), &[0.0, 1.0]);
}

#[test]
fn softmax_all_masked_row_is_an_error() {
    let z = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let mask = t(
        &[2, 2],
        &[0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
    );
    let err = z.softmax_rows(Some(&mask)).unwrap_err();
    assert!(err.to_string().contains("row 1"));
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = Rng::seed(2);
    for _ in 0..50 {
        let n = 1 + rng.below(6);
        let m = 1 + rng.below(8);
        let z = Tensor::randn(vec![n, m], &mut rng).scale(5.0);
        let s = z.softmax_rows(None).unwrap();
        for r in 0..n {
            let sum: f64 = s.data()[r * m..(r + 1) * m].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_identity_and_shape_errors() {
    let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let c = a.matmul(&Tensor::eye(2)).unwrap();
    assert_eq!(c.data(), a.data());
    let err = a.matmul(&t(&[3, 2], &[0.0; 6])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 2]") && msg.contains("[3, 2]"), "{msg}");
}

#[test]
fn l2_norm_of_three_four_is_five() {
    let x = t(&[2], &[3.0, 4.0]);
    assert_eq!(x.l2_norm_last().item(), 5.0);
}

#[test]
fn segment_sum_pools_rows() {
    let x = t(&[3], &[1.0, 2.0, 3.0]);
    let out = x.segment_sum(&[0, 0, 1], 2).unwrap();
    assert_eq!(out.data(), &[3.0, 3.0]);
}

#[test]
fn broadcast_suffix_rule() {
    // [N, D] + [D] adds the vector to every row.
    let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let b = t(&[3], &[10.0, 20.0, 30.0]);
    let y = x.add(&b).unwrap();
    assert_eq!(y.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    // Mismatched non-suffix shapes are named in the error.
    let err = x.add(&t(&[2], &[1.0, 2.0])).unwrap_err();
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn backward_of_sum_of_squares() {
    let tape = Tape::new();
    let x = tape.watch(&t(&[2], &[1.0, 2.0]));
    let loss = x.square().sum_all();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_of_softmax_component_matches_finite_differences() {
    // Analytic gradient of softmax(x)[0] at x = [0, 0] is [1/4, -1/4];
    // frozen after checking against central differences below.
    let f = |x: &Tensor| -> crate::error::Result<Tensor> {
        let s = x.reshape(vec![1, 2])?.softmax_rows(None)?;
        Ok(s.mul(&t(&[1, 2], &[1.0, 0.0]))?.sum_all())
    };
    let x0 = t(&[2], &[0.0, 0.0]);
    let tape = Tape::new();
    let xt = tape.watch(&x0);
    f(&xt).unwrap().backward().unwrap();
    let grad = xt.grad().unwrap();
    assert!((grad.data()[0] - 0.25).abs() < 1e-12);
    assert!((grad.data()[1] + 0.25).abs() < 1e-12);

    let h = 1e-6;
    for i in 0..2 {
        let mut plus = x0.data().to_vec();
        plus[i] += h;
        let mut minus = x0.data().to_vec();
        minus[i] -= h;
        let fp = f(&t(&[2], &plus)).unwrap().item();
        let fm = f(&t(&[2], &minus)).unwrap().item();
        let fd = (fp - fm) / (2.0 * h);
        assert!((grad.data()[i] - fd).abs() < 1e-9, "coord {i}");
    }
}

#[test]
fn backward_of_l2_norm_is_the_unit_vector() {
    let tape = Tape::new();
    let x = tape.watch(&t(&[2], &[3.0, 4.0]));
    x.l2_norm_last().backward().unwrap();
    let g = x.grad().unwrap();
    assert!((g.data()[0] - 0.6).abs() < 1e-15);
    assert!((g.data()[1] - 0.8).abs() < 1e-15);
}

#[test]
fn backward_requires_scalar_and_attached_loss() {
    let tape = Tape::new();
    let x = tape.watch(&t(&[2], &[1.0, 2.0]));
    let err = x.square().backward().unwrap_err();
    assert!(err.to_string().contains("scalar"));
    let detached = t(&[1], &[1.0]);
    assert!(matches!(detached.backward(), Err(crate::error::Error::DetachedTape)));
}

#[test]
fn operands_from_two_tapes_are_rejected() {
    let t1 = Tape::new();
    let t2 = Tape::new();
    let a = t1.watch(&t(&[2], &[1.0, 2.0]));
    let b = t2.watch(&t(&[2], &[3.0, 4.0]));
    assert!(matches!(a.add(&b), Err(crate::error::Error::TapeMismatch)));
}

#[test]
fn gradients_are_deterministic_across_runs() {
    let run = || {
        let mut rng = Rng::seed(77);
        let x = Tensor::randn(vec![4, 4], &mut rng);
        let w = Tensor::randn(vec![4, 4], &mut rng);
        let tape = Tape::new();
        let xt = tape.watch(&x);
        let wt = tape.watch(&w);
        let y = xt
            .matmul(&wt)
            .unwrap()
            .relu()
            .softmax_rows(None)
            .unwrap()
            .square()
            .sum_all();
        y.backward().unwrap();
        (
            xt.grad().unwrap().data().to_vec(),
            wt.grad().unwrap().data().to_vec(),
        )
    };
    let (gx1, gw1) = run();
    let (gx2, gw2) = run();
    assert_eq!(gx1, gx2);
    assert_eq!(gw1, gw2);
}

#[test]
fn grad_check_covers_every_primitive() {
    // One grad_check per differentiable primitive, inputs kept away from
    // kinks (relu at 0, sqrt at 0, zero rows for norms).
    let mut rng = Rng::seed(3);
    let x = Tensor::randn(vec![3, 4], &mut rng);
    let other = Tensor::randn(vec![3, 4], &mut rng).add_scalar(3.0);
    let vecb = Tensor::randn(vec![4], &mut rng);
    let square_mat = Tensor::randn(vec![4, 4], &mut rng);

    let cases: Vec<(&str, Box<dyn Fn(&Tensor) -> crate::error::Result<Tensor>>)> = vec![
        ("add", Box::new({
            let o = other.clone();
            move |x| x.add(&o)?.square().sum_all().into_ok()
        })),
        ("sub", Box::new({
            let o = other.clone();
            move |x| x.sub(&o)?.square().sum_all().into_ok()
        })),
        ("mul", Box::new({
            let o = other.clone();
            move |x| x.mul(&o)?.sum_all().into_ok()
        })),
        ("div", Box::new({
            let o = other.clone();
            move |x| x.div(&o)?.sum_all().into_ok()
        })),
        ("mul_suffix", Box::new({
            let v = vecb.clone();
            move |x| x.mul(&v)?.sum_all().into_ok()
        })),
        ("scale", Box::new(|x| x.scale(-2.5).sum_all().into_ok())),
        ("add_scalar", Box::new(|x| x.add_scalar(1.5).square().sum_all().into_ok())),
        ("matmul", Box::new({
            let m = square_mat.clone();
            move |x| x.matmul(&m)?.square().sum_all().into_ok()
        })),
        ("transpose", Box::new(|x| x.transpose()?.square().sum_all().into_ok())),
        ("relu_shifted", Box::new(|x| x.add_scalar(0.05).relu().sum_all().into_ok())),
        ("sin", Box::new(|x| x.sin().sum_all().into_ok())),
        ("cos", Box::new(|x| x.cos().sum_all().into_ok())),
        ("sqrt_positive", Box::new(|x| x.square().add_scalar(1.0).sqrt().sum_all().into_ok())),
        ("square", Box::new(|x| x.square().sum_all().into_ok())),
        ("sum_axis0", Box::new(|x| x.sum_axis(0)?.square().sum_all().into_ok())),
        ("mean_axis1", Box::new(|x| x.mean_axis(1)?.square().sum_all().into_ok())),
        ("sum_all", Box::new(|x| x.sum_all().square().sum_all().into_ok())),
        ("l2_norm_last", Box::new(|x| x.l2_norm_last().sum_all().into_ok())),
        ("rms_normalize", Box::new(|x| x.rms_normalize(1e-8).square().sum_all().into_ok())),
        ("broadcast_last", Box::new(|x| x.broadcast_last(3).square().sum_all().into_ok())),
        ("concat_last", Box::new({
            let o = other.clone();
            move |x| Tensor::concat_last(&[x, &o])?.square().sum_all().into_ok()
        })),
        ("gather_rows", Box::new(|x| x.gather_rows(&[2, 0, 0])?.square().sum_all().into_ok())),
        ("segment_sum", Box::new(|x| x.segment_sum(&[1, 0, 1], 2)?.square().sum_all().into_ok())),
        ("softmax_rows", Box::new(|x| x.softmax_rows(None)?.square().sum_all().into_ok())),
        ("reshape", Box::new(|x| x.reshape(vec![4, 3])?.square().sum_all().into_ok())),
    ];
    for (name, f) in cases {
        let err = grad_check(|x| f(x), &x, 1e-6).unwrap();
        assert!(err < 1e-5, "{name}: rel err {err}");
    }
}

trait IntoOk {
    fn into_ok(self) -> crate::error::Result<Tensor>;
}
impl IntoOk for Tensor {
    fn into_ok(self) -> crate::error::Result<Tensor> {
        Ok(self)
    }
}

#[test]
fn mask_gradient_flows_to_tracked_bias() {
    // theta-style additive bias inside the softmax must receive gradients.
    let mut rng = Rng::seed(5);
    let z = Tensor::randn(vec![3, 3], &mut rng);
    let bias = Tensor::randn(vec![3, 3], &mut rng);
    let err = grad_check(
        |b| Ok(z.add(b)?.softmax_rows(None)?.square().sum_all()),
        &bias,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn watch_is_a_detached_copy() {
    let tape = Tape::new();
    let x = t(&[2], &[1.0, 2.0]);
    let w = tape.watch(&x);
    assert!(!x.requires_grad());
    assert!(w.requires_grad());
    assert_eq!(x.data(), w.data());
}

#[test]
fn grad_is_none_when_unreached() {
    let tape = Tape::new();
    let a = tape.watch(&t(&[1], &[1.0]));
    let b = tape.watch(&t(&[1], &[2.0]));
    let loss = a.square().sum_all();
    loss.backward().unwrap();
    assert!(b.grad().is_none());
    assert_eq!(b.grad_or_zeros().data(), &[0.0]);
}
