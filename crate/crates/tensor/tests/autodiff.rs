use its_tensor::tsr1::{self, DType, RawTensor};
use its_tensor::{no_grad, ParamStore, Precision, PrecisionGuard, Tensor, TensorError};
use proptest::prelude::*;

#[test]
fn sum_of_squares_gradient() {
    let x = Tensor::from_slice(&[1.0, 2.0, 3.0]).requires_grad();
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
}

#[test]
fn repeated_backward_accumulates() {
    let x = Tensor::from_slice(&[1.0, -1.0]).requires_grad();
    let loss = x.mul(&x).unwrap().sum();
    loss.backward().unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, -4.0]);
    x.zero_grad();
    assert!(x.grad().is_none());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let x = Tensor::from_slice(&[1.0, 2.0]).requires_grad();
    let err = x.scale(2.0).backward().unwrap_err();
    assert!(matches!(err, TensorError::NonScalarLoss(ref s) if s == &vec![2]));
}

#[test]
fn off_path_values_get_zero_gradient() {
    let a = Tensor::from_slice(&[1.0, 2.0]).requires_grad();
    let b = Tensor::from_slice(&[3.0]).requires_grad();
    let _unused = b.scale(3.0);
    a.sum().backward().unwrap();
    assert_eq!(b.grad_or_zeros(), vec![0.0]);
}

#[test]
fn frozen_parameter_gets_no_gradient() {
    let mut store = ParamStore::new();
    let w = store.add("encoder/w", Tensor::from_slice(&[0.5, 0.5]));
    store.freeze_prefix("encoder/");
    let loss = w.mul(&w).unwrap().sum();
    loss.backward().unwrap();
    assert_eq!(w.grad_or_zeros(), vec![0.0, 0.0]);
}

#[test]
fn no_grad_builds_no_graph() {
    let x = Tensor::from_slice(&[1.0]).requires_grad();
    let y = no_grad(|| x.exp());
    assert!(y.is_leaf() && !y.is_requires_grad());
}

#[test]
fn f32_precision_rounds_outputs() {
    let x = Tensor::from_slice(&[0.1]);
    let y64 = x.scale(3.0).item();
    let y32 = {
        let _g = PrecisionGuard::new(Precision::F32);
        x.scale(3.0).item()
    };
    assert_eq!(y32, (0.1f64 * 3.0) as f32 as f64);
    assert_ne!(y32, y64);
}

fn conv_stack(seed: u64) -> (Vec<f64>, Vec<f64>) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = its_tensor::init::normal(&[2, 3, 9], 1.0, &mut rng);
    let w = its_tensor::init::normal(&[4, 3, 3], 0.5, &mut rng).requires_grad();
    let y = x.conv1d(&w, None, 1, 1, 1).unwrap().tanh().layernorm(None, None, 1, 1e-5).unwrap();
    y.mul(&y).unwrap().sum().backward().unwrap();
    (y.to_vec(), w.grad().unwrap())
}

#[test]
fn identical_inputs_give_bit_identical_results() {
    let (y1, g1) = conv_stack(9);
    let (y2, g2) = conv_stack(9);
    assert_eq!(y1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn container_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.tsr1c");
    let a = RawTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let b = RawTensor::new(vec![], vec![7.5]);
    tsr1::save_container(&path, [("enc/w", &a), ("step", &b)], DType::F64).unwrap();
    let back = tsr1::load_container(&path).unwrap();
    assert_eq!(back, vec![("enc/w".to_string(), a), ("step".to_string(), b)]);
}

proptest! {
    #[test]
    fn tsr1_roundtrip(shape in proptest::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64 - 500.0) / 7.0).collect();
        for dtype in [DType::F32, DType::F64] {
            let mut buf = Vec::new();
            tsr1::write(&mut buf, &shape, &data, dtype).unwrap();
            let (back, dt) = tsr1::read(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(dt, dtype);
            prop_assert_eq!(&back.shape, &shape);
            let expect: Vec<f64> = match dtype {
                DType::F32 => data.iter().map(|&v| v as f32 as f64).collect(),
                DType::F64 => data.clone(),
            };
            prop_assert_eq!(back.data, expect);
        }
    }

    #[test]
    fn dropout_eval_is_exact_identity(v in proptest::collection::vec(-1e6f64..1e6, 1..64), p in 0.0f64..0.9) {
        let x = Tensor::from_slice(&v);
        let y = x.dropout(its_tensor::Dropout { p, train: false, seed: 1, layer_id: 1, step: 1 }).unwrap();
        prop_assert_eq!(y.to_vec(), v);
    }
}
