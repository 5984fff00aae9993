use mipcnet::attention::{
    Cam, ChannelGate, DaBlock, MipcBlock, MipcVariant, Pam, PcBlock, PositionGate, ResidualTail,
};
use mipcnet::nn::{identity_kernel, BuildState, Mode, ParamStore, Session};
use mipcnet::{Error, Tensor, Var};

fn feature(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| (((i as u64 * 2654435761 + seed * 97) % 10007) as f64 / 10007.0 - 0.5) * 4.0)
}

fn with_store<B>(seed: u64, build: impl FnOnce(&mut BuildState) -> B) -> (B, ParamStore<f64>) {
    let mut st = BuildState::new(seed);
    let b = build(&mut st);
    (b, st.finish())
}

fn set_scalar(store: &mut ParamStore<f64>, id: mipcnet::nn::ParamId, v: f64) {
    store.set(id, Tensor::new(vec![1], vec![v]).unwrap());
}

#[test]
fn pam_preserves_shape_and_is_identity_at_zero_gamma() {
    let (pam, store) = with_store(1, |st| Pam::new(&mut st.root().child("pam"), 8));
    let s = Session::inference(&store, Mode::Eval);
    let x = Var::constant(feature([2, 8, 14, 14], 1));
    let y = pam.forward(&s, &x).unwrap();
    assert_eq!(y.shape(), &[2, 8, 14, 14]);
    assert_eq!(y.value(), x.value());
}

#[test]
fn cam_preserves_shape_and_is_identity_at_zero_gamma() {
    let (cam, store) = with_store(1, |st| Cam::new(&mut st.root().child("cam")));
    let s = Session::inference(&store, Mode::Eval);
    let x = Var::constant(feature([1, 4, 8, 8], 2));
    let y = cam.forward(&s, &x).unwrap();
    assert_eq!(y.shape(), &[1, 4, 8, 8]);
    assert_eq!(y.value(), x.value());
}

#[test]
fn affinity_rows_sum_to_one() {
    let (pam, store) = with_store(2, |st| Pam::new(&mut st.root().child("pam"), 8));
    let cam = Cam { gamma: pam.gamma };
    let s = Session::inference(&store, Mode::Eval);
    let x = Var::constant(feature([2, 8, 6, 5], 3));
    for (attn, n) in [(pam.affinity(&s, &x).unwrap(), 30), (cam.affinity(&x).unwrap(), 8)] {
        for row in attn.value().data().chunks(n) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn non_finite_input_names_the_axis() {
    let (pam, store) = with_store(1, |st| Pam::new(&mut st.root().child("pam"), 4));
    let s = Session::inference(&store, Mode::Eval);
    let mut x = feature([1, 4, 3, 3], 1);
    let off = x.offset(&[0, 2, 1, 0]);
    x.data_mut()[off] = f64::NAN;
    let err = pam.forward(&s, &Var::constant(x)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }));
    let msg = err.to_string();
    assert!(msg.contains("channel=2") && msg.contains("height=1"), "{msg}");
}

#[test]
fn channel_gate_ignores_spatial_permutation() {
    let (g, store) = with_store(4, |st| ChannelGate::new(&mut st.root(), 32));
    let s = Session::inference(&store, Mode::Eval);
    let x = feature([2, 32, 4, 4], 5);
    // reverse the 16 positions of every channel
    let mut p = x.clone();
    for plane in p.data_mut().chunks_mut(16) {
        plane.reverse();
    }
    let a = g.forward(&s, &Var::constant(x)).unwrap();
    let b = g.forward(&s, &Var::constant(p)).unwrap();
    assert_eq!(a.shape(), &[2, 32, 1, 1]);
    for (u, v) in a.value().data().iter().zip(b.value().data()) {
        assert!((u - v).abs() < 1e-14);
        assert!((0.0..=1.0).contains(u));
    }
}

#[test]
fn position_gate_ignores_channel_permutation() {
    let (g, store) = with_store(4, |st| PositionGate::new(&mut st.root()));
    let s = Session::inference(&store, Mode::Eval);
    let x = feature([2, 16, 8, 8], 6);
    let mut p = x.clone();
    for b in 0..2 {
        for c in 0..16 {
            for i in 0..64 {
                let dst = b * 1024 + c * 64 + i;
                let src = b * 1024 + ((c * 5 + 3) % 16) * 64 + i;
                p.data_mut()[dst] = x.data()[src];
            }
        }
    }
    let a = g.forward(&s, &Var::constant(x)).unwrap();
    let b = g.forward(&s, &Var::constant(p)).unwrap();
    assert_eq!(a.shape(), &[2, 1, 8, 8]);
    for (u, v) in a.value().data().iter().zip(b.value().data()) {
        assert!((u - v).abs() < 1e-14);
        assert!((0.0..=1.0).contains(u));
    }
}

#[test]
fn every_variant_preserves_shape() {
    for variant in MipcVariant::ALL {
        let (block, store) = with_store(7, |st| MipcBlock::new(&mut st.root().child("mipc"), 32, variant));
        let s = Session::inference(&store, Mode::Train);
        let x = Var::constant(feature([2, 32, 28, 28], 8));
        let y = block.forward(&s, &x).unwrap();
        assert_eq!(y.shape(), &[2, 32, 28, 28], "{}", variant.label());
        assert!(y.value().all_finite());
    }
}

#[test]
fn gated_position_branch_is_bounded_by_pam() {
    let (block, mut store) =
        with_store(7, |st| MipcBlock::new(&mut st.root().child("mipc"), 16, MipcVariant::default()));
    set_scalar(&mut store, block.pam.gamma, 0.7);
    let s = Session::inference(&store, Mode::Eval);
    let x = Var::constant(feature([1, 16, 6, 6], 9));
    let parts = block.parts(&s, &x, false).unwrap();
    let pam = block.pam.forward(&s, &x).unwrap();
    for (b, p) in parts.beta.value().data().iter().zip(pam.value().data()) {
        assert!(b.abs() <= p.abs());
    }
}

#[test]
fn residual_tail_with_zero_kernels_is_relu() {
    let (tail, mut store) = with_store(3, |st| ResidualTail::new(&mut st.root().child("tail"), 8));
    for id in [tail.conv1.weight, tail.conv2.weight] {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::zeros(shape));
    }
    let x = feature([1, 8, 16, 16], 10);
    let relu = x.map(|v| v.max(0.0));
    for mode in [Mode::Train, Mode::Eval] {
        let s = Session::inference(&store, mode);
        let y = tail.forward(&s, &Var::constant(x.clone())).unwrap();
        assert_eq!(y.value(), &relu);
    }
}

#[test]
fn da_block_with_identity_convs_doubles_input() {
    let (da, mut store) = with_store(5, |st| DaBlock::new(&mut st.root().child("da"), 64));
    for conv in da.convs() {
        store.set(conv.weight, identity_kernel(64, 3));
        store.set(conv.bias.unwrap(), Tensor::zeros(vec![64]));
    }
    let s = Session::inference(&store, Mode::Eval);
    let x = feature([2, 64, 28, 28], 11);
    let y = da.forward(&s, &Var::constant(x.clone())).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert_eq!(y.value(), &x.map(|v| 2.0 * v));
}

#[test]
fn pc_block_matches_mipc_with_open_gates() {
    let (mipc, mut store) =
        with_store(12, |st| MipcBlock::new(&mut st.root().child("mipc"), 16, MipcVariant::default()));
    set_scalar(&mut store, mipc.pam.gamma, 0.3);
    set_scalar(&mut store, mipc.cam.gamma, -0.2);
    let pc = mipc.as_pc();
    let s = Session::inference(&store, Mode::Train);
    let x = Var::constant(feature([2, 16, 14, 14], 13));
    let a = mipc.forward_gated(&s, &x, true).unwrap();
    let b = pc.forward(&s, &x).unwrap();
    assert_eq!(b.shape(), &[2, 16, 14, 14]);
    for (u, v) in a.value().data().iter().zip(b.value().data()) {
        assert!((u - v).abs() <= 1e-6);
    }
    let closed = mipc.forward(&s, &x).unwrap();
    assert_ne!(closed.value(), a.value());
}

#[test]
fn pc_block_has_fewer_parameters() {
    for c in [4, 16, 64] {
        let mut st = BuildState::new(0);
        let mipc = MipcBlock::new(&mut st.root().child("mipc"), c, MipcVariant::default());
        let pc = PcBlock::new(&mut st.root().child("pc"), c);
        let store = st.finish();
        assert!(store.count_of(&pc.param_ids()) < store.count_of(&mipc.param_ids()));
        assert_eq!(store.count_of(&pc.param_ids()), store.count_of(&mipc.as_pc().param_ids()));
    }
}

#[test]
fn same_seed_gives_identical_outputs() {
    let run = || {
        let (block, mut store) =
            with_store(21, |st| MipcBlock::new(&mut st.root().child("mipc"), 8, MipcVariant::default()));
        set_scalar(&mut store, block.pam.gamma, 0.5);
        let store = store.cast::<f32>();
        let s = Session::inference(&store, Mode::Train);
        let x = Var::constant(feature([1, 8, 10, 10], 1).cast::<f32>());
        block.forward(&s, &x).unwrap().value().clone()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
}
