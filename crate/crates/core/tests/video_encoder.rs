mod common;

use common::*;
use crossframe::nn::layers::Linear;
use crossframe::nn::{Origin, ParamStore};
use crossframe::tensor::{Rng, Tape, Tensor};
use crossframe::video::{
    embed_frame, encode_video, init_from_image_weights, make_messages, patchify, CctBlock,
    CctOptions, EncoderConfig, Frame, FrameEmbedding, Mit, VideoClip, VideoEncoder,
};

fn tiny_cfg() -> EncoderConfig {
    // 2×4 frame with 2×2 patches: N = 2
    EncoderConfig {
        frames: 2,
        height: 2,
        width: 4,
        patch: 2,
        dim: 4,
        cct_depth: 1,
        mit_depth: 1,
        heads: 1,
    }
}

fn full_store(cfg: &EncoderConfig, seed: u64) -> ParamStore {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    VideoEncoder::init_image_params(cfg, &mut store, &mut rng);
    VideoEncoder::init_video_params(cfg, &mut store, &mut rng);
    randomize(&mut store, 0.5, &mut rng);
    store
}

fn random_frame(h: usize, w: usize, rng: &mut Rng) -> Frame {
    Frame::new(h, w, (0..h * w * 3).map(|_| rng.uniform()).collect()).unwrap()
}

#[test]
fn patchify_counts_and_order() {
    let mut rng = Rng::new(1);
    let f = random_frame(8, 8, &mut rng);
    let p = patchify(&f, 4).unwrap();
    assert_eq!(p.shape(), &[4, 48]);
    // second patch starts at column 4 of row 0
    assert_eq!(&p.row_slice(1)[..3], &f.pixel(0, 4));
    assert_eq!(&p.row_slice(2)[..3], &f.pixel(4, 0));
    assert_eq!(
        patchify(&Frame::filled(224, 224, 0.0), 32).unwrap().rows(),
        49
    );
    assert!(patchify(&Frame::filled(10, 8, 0.0), 4).is_err());
}

#[test]
fn embed_frame_examples() {
    let mut rng = Rng::new(2);
    let pos = Tensor::matrix(5, 8, (0..40).map(|_| rng.normal()).collect()).unwrap();
    let mut tape = Tape::new();
    let emb = FrameEmbedding {
        proj: tape.constant(Tensor::zeros(&[48, 8])).unwrap(),
        class: tape.constant(Tensor::zeros(&[1, 8])).unwrap(),
        pos: tape.constant(pos.clone()).unwrap(),
    };
    let patches = tape.constant(Tensor::zeros(&[4, 48])).unwrap();
    let tokens = embed_frame(&mut tape, patches, &emb).unwrap();
    assert!(tape.value(tokens).bitwise_eq(&pos));
    assert_eq!(tape.value(tokens).rows(), 5);

    // two frames differ only through the patch term
    let proj = Tensor::matrix(48, 8, (0..384).map(|_| rng.normal()).collect()).unwrap();
    let emb = FrameEmbedding {
        proj: tape.constant(proj.clone()).unwrap(),
        class: tape.constant(Tensor::row(vec![0.3; 8])).unwrap(),
        pos: emb.pos,
    };
    let pa = Tensor::matrix(4, 48, (0..192).map(|_| rng.uniform()).collect()).unwrap();
    let pb = Tensor::matrix(4, 48, (0..192).map(|_| rng.uniform()).collect()).unwrap();
    let va = tape.constant(pa.clone()).unwrap();
    let vb = tape.constant(pb.clone()).unwrap();
    let ta = embed_frame(&mut tape, va, &emb).unwrap();
    let tb = embed_frame(&mut tape, vb, &emb).unwrap();
    let (ta, tb) = (tape.value(ta).clone(), tape.value(tb).clone());
    assert_eq!(ta.row_slice(0), tb.row_slice(0));
    for n in 0..4 {
        for j in 0..8 {
            let delta: f64 = (0..48)
                .map(|i| (pa.get2(n, i) - pb.get2(n, i)) * proj.get2(i, j))
                .sum();
            assert!((ta.get2(n + 1, j) - tb.get2(n + 1, j) - delta).abs() < 1e-12);
        }
    }
}

#[test]
fn messages_examples() {
    let mut rng = Rng::new(3);
    let cls = rand_mat(3, 4, &mut rng);
    let mut store = ParamStore::new();
    store.insert("m.w", Tensor::eye(4), Origin::Fresh);
    store.insert("m.b", Tensor::zeros(&[1, 4]), Origin::Fresh);
    let mut tape = Tape::new();
    let msg = Linear::bind(&mut tape, &store, "m").unwrap();
    let c = tape.constant(to_tensor(&cls)).unwrap();
    let out = make_messages(&mut tape, c, &msg).unwrap();
    assert_eq!(tape.value(out).data(), flat(&cls).as_slice());

    let b = vec![0.1, -0.2, 0.3, 0.4];
    store.insert("m.w", Tensor::zeros(&[4, 4]), Origin::Fresh);
    store.insert("m.b", Tensor::row(b.clone()), Origin::Fresh);
    let mut tape = Tape::new();
    let c = tape.constant(to_tensor(&cls)).unwrap();
    let msg = Linear::bind(&mut tape, &store, "m").unwrap();
    let out = make_messages(&mut tape, c, &msg).unwrap();
    for r in 0..3 {
        assert_eq!(tape.value(out).row_slice(r), b.as_slice());
    }

    randomize(&mut store, 1.0, &mut rng);
    let mut tape = Tape::new();
    let c = tape.constant(to_tensor(&cls)).unwrap();
    let msg = Linear::bind(&mut tape, &store, "m").unwrap();
    let out = make_messages(&mut tape, c, &msg).unwrap();
    let expected: Vec<f64> = cls
        .iter()
        .flat_map(|row| linear(&vec![row.clone()], &store, "m").remove(0))
        .collect();
    assert!(max_diff(tape.value(out).data(), &expected) < 1e-12);
}

#[test]
fn zeroed_cfa_output_keeps_messages() {
    let cfg = tiny_cfg();
    let mut rng = Rng::new(4);
    let mut store = ParamStore::new();
    VideoEncoder::init_image_params(&cfg, &mut store, &mut rng);
    VideoEncoder::init_video_params(&cfg, &mut store, &mut rng);
    let mut tape = Tape::new();
    let block = CctBlock::bind(&mut tape, &store, "visual.blocks.0", 1).unwrap();
    let m = tape.constant(to_tensor(&rand_mat(3, 4, &mut rng))).unwrap();
    let fused = block.fuse(&mut tape, m).unwrap();
    assert!(tape.value(fused).bitwise_eq(tape.value(m)));
}

#[test]
fn single_frame_cfa_is_value_then_output() {
    let cfg = tiny_cfg();
    let store = full_store(&cfg, 5);
    let mut rng = Rng::new(50);
    let m = rand_mat(1, 4, &mut rng);
    let mut tape = Tape::new();
    let block = CctBlock::bind(&mut tape, &store, "visual.blocks.0", 1).unwrap();
    let mv = tape.constant(to_tensor(&m)).unwrap();
    let fused = block.fuse(&mut tape, mv).unwrap();
    let n = layer_norm(&m, &store, "visual.blocks.0.cfa_ln");
    let v = linear(&n, &store, "visual.blocks.0.cfa.v");
    let expected = add(&m, &linear(&v, &store, "visual.blocks.0.cfa.o"));
    assert!(max_diff(tape.value(fused).data(), &flat(&expected)) < 1e-12);
}

/// Explicit-loop reference for one communication block.
fn cct_oracle(frames: &[Mat], store: &ParamStore, prefix: &str, heads: usize) -> Vec<Mat> {
    let cls: Mat = frames.iter().map(|z| z[0].clone()).collect();
    let m = linear(&cls, store, &format!("{prefix}.msg"));
    let n = layer_norm(&m, store, &format!("{prefix}.cfa_ln"));
    let m_hat = add(
        &m,
        &attention(&n, &n, store, &format!("{prefix}.cfa"), heads),
    );
    frames
        .iter()
        .enumerate()
        .map(|(t, z)| {
            let mut seq = z.clone();
            seq.push(m_hat[t].clone());
            let mut diffused = attend(&seq, store, prefix, heads);
            diffused.pop();
            feed_forward(&diffused, store, prefix)
        })
        .collect()
}

#[test]
fn cct_block_matches_loop_oracle() {
    let cfg = tiny_cfg();
    let store = full_store(&cfg, 6);
    let mut rng = Rng::new(60);
    let frames: Vec<Mat> = (0..2).map(|_| rand_mat(3, 4, &mut rng)).collect();
    let expected = cct_oracle(&frames, &store, "visual.blocks.0", 1);

    let mut tape = Tape::new();
    let block = CctBlock::bind(&mut tape, &store, "visual.blocks.0", 1).unwrap();
    let vars: Vec<_> = frames
        .iter()
        .map(|f| tape.constant(to_tensor(f)).unwrap())
        .collect();
    let out = block.forward(&mut tape, &vars).unwrap();
    for (o, e) in out.iter().zip(&expected) {
        assert_eq!(tape.value(*o).shape(), &[3, 4]);
        assert!(max_diff(tape.value(*o).data(), &flat(e)) < 1e-12);
    }
}

#[test]
fn two_heads_match_loop_oracle() {
    let cfg = EncoderConfig {
        heads: 2,
        ..tiny_cfg()
    };
    let store = full_store(&cfg, 7);
    let mut rng = Rng::new(70);
    let frames: Vec<Mat> = (0..3).map(|_| rand_mat(3, 4, &mut rng)).collect();
    let expected = cct_oracle(&frames, &store, "visual.blocks.0", 2);
    let mut tape = Tape::new();
    let block = CctBlock::bind(&mut tape, &store, "visual.blocks.0", 2).unwrap();
    let vars: Vec<_> = frames
        .iter()
        .map(|f| tape.constant(to_tensor(f)).unwrap())
        .collect();
    let out = block.forward(&mut tape, &vars).unwrap();
    for (o, e) in out.iter().zip(&expected) {
        assert!(max_diff(tape.value(*o).data(), &flat(e)) < 1e-12);
    }
}

#[test]
fn dropped_message_state_does_not_leak() {
    let cfg = tiny_cfg();
    let store = full_store(&cfg, 8);
    let mut rng = Rng::new(80);
    let frames: Vec<Mat> = (0..2).map(|_| rand_mat(3, 4, &mut rng)).collect();
    let junk: Vec<Tensor> = (0..2)
        .map(|_| to_tensor(&rand_mat(1, 4, &mut rng)))
        .collect();
    let run = |over: Option<&[Tensor]>| {
        let mut tape = Tape::new();
        let block = CctBlock::bind(&mut tape, &store, "visual.blocks.0", 1).unwrap();
        let vars: Vec<_> = frames
            .iter()
            .map(|f| tape.constant(to_tensor(f)).unwrap())
            .collect();
        let out = block
            .forward_with(
                &mut tape,
                &vars,
                CctOptions {
                    skip_ffn: false,
                    message_override: over,
                },
            )
            .unwrap();
        out.iter()
            .map(|o| tape.value(*o).clone())
            .collect::<Vec<_>>()
    };
    let (a, b) = (run(None), run(Some(&junk)));
    assert!(a.iter().zip(&b).all(|(x, y)| x.bitwise_eq(y)));
}

fn clip_of(frames: Vec<Frame>) -> VideoClip {
    VideoClip::new(frames).unwrap()
}

#[test]
fn encoder_shapes_and_composition() {
    let cfg = EncoderConfig {
        frames: 3,
        cct_depth: 2,
        mit_depth: 2,
        ..tiny_cfg()
    };
    let store = full_store(&cfg, 9);
    let mut rng = Rng::new(90);
    let clip = clip_of((0..3).map(|_| random_frame(2, 4, &mut rng)).collect());
    let mut tape = Tape::new();
    let enc = VideoEncoder::bind(&mut tape, &store, &cfg).unwrap();
    let (v, frames) = enc.encode(&mut tape, &clip).unwrap();
    assert_eq!(tape.value(frames.cls).shape(), &[3, 4]);
    assert_eq!(tape.value(v).shape(), &[1, 4]);
    for t in 0..3 {
        assert_eq!(tape.value(frames.tokens[t]).shape(), &[3, 4]);
        let p = frames.patch_tokens(&mut tape, t).unwrap();
        assert_eq!(tape.value(p).shape(), &[2, 4]);
    }

    // manual composition: embed, two blocks, MIT, mean
    let embedded: Vec<Mat> = clip
        .frames
        .iter()
        .map(|f| {
            let mut p = to_mat(&patchify(f, 2).unwrap());
            for row in &mut p {
                for x in row.iter_mut() {
                    *x = (*x - 0.5) / 0.25;
                }
            }
            let proj = store.get("visual.embed.proj").unwrap();
            let mut tokens = vec![store.get("visual.embed.class").unwrap().data().to_vec()];
            for row in &p {
                tokens.push(
                    (0..4)
                        .map(|j| (0..12).map(|i| row[i] * proj.get2(i, j)).sum())
                        .collect(),
                );
            }
            add(&tokens, &to_mat(store.get("visual.embed.pos").unwrap()))
        })
        .collect();
    let z1 = cct_oracle(&embedded, &store, "visual.blocks.0", 1);
    let z2 = cct_oracle(&z1, &store, "visual.blocks.1", 1);
    let h: Mat = z2.iter().map(|z| z[0].clone()).collect();
    assert!(max_diff(tape.value(frames.cls).data(), &flat(&h)) < 1e-10);
    let mut x = add(&h, &to_mat(store.get("mit.pos").unwrap()));
    for l in 0..2 {
        x = block(&x, &store, &format!("mit.blocks.{l}"), 1);
    }
    assert!(max_diff(tape.value(v).data(), &mean_rows(&x)) < 1e-10);
}

#[test]
fn identical_frames_give_identical_cls() {
    let cfg = EncoderConfig {
        frames: 4,
        cct_depth: 2,
        ..tiny_cfg()
    };
    let store = full_store(&cfg, 10);
    let mut rng = Rng::new(100);
    let f = random_frame(2, 4, &mut rng);
    let clip = clip_of(vec![f; 4]);
    let mut tape = Tape::new();
    let enc = VideoEncoder::bind(&mut tape, &store, &cfg).unwrap();
    let frames = enc.encode_frames(&mut tape, &clip).unwrap();
    let h = tape.value(frames.cls);
    for t in 1..4 {
        assert!(max_diff(h.row_slice(0), h.row_slice(t)) < 1e-9);
    }
}

fn mit_setup(frames: usize, seed: u64) -> (ParamStore, EncoderConfig) {
    let cfg = EncoderConfig {
        frames,
        mit_depth: 2,
        ..tiny_cfg()
    };
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    Mit::init(&mut store, &cfg, &mut rng);
    randomize(&mut store, 0.5, &mut rng);
    (store, cfg)
}

fn run_mit(store: &ParamStore, cfg: &EncoderConfig, h: &Mat, e_temp: &Mat) -> Vec<f64> {
    let mut tape = Tape::new();
    let mit = Mit::bind(&mut tape, store, cfg).unwrap();
    let hv = tape.constant(to_tensor(h)).unwrap();
    let ev = tape.constant(to_tensor(e_temp)).unwrap();
    let v = encode_video(&mut tape, hv, ev, &mit.blocks).unwrap();
    tape.value(v).data().to_vec()
}

#[test]
fn pooled_video_is_order_free_without_temporal_code() {
    let (store, cfg) = mit_setup(4, 11);
    let mut rng = Rng::new(110);
    let h = rand_mat(4, 4, &mut rng);
    let zero = vec![vec![0.0; 4]; 4];
    let base = run_mit(&store, &cfg, &h, &zero);
    for order in [[3, 2, 1, 0], [1, 0, 3, 2], [2, 3, 0, 1]] {
        let p: Mat = order.iter().map(|&i| h[i].clone()).collect();
        assert!(max_diff(&run_mit(&store, &cfg, &p, &zero), &base) < 1e-9);
    }
    // a non-zero temporal code breaks the symmetry
    let e = rand_mat(4, 4, &mut rng);
    let p: Mat = [3, 2, 1, 0].iter().map(|&i| h[i].clone()).collect();
    assert!(
        max_diff(
            &run_mit(&store, &cfg, &p, &e),
            &run_mit(&store, &cfg, &h, &e)
        ) > 1e-6
    );
}

#[test]
fn single_and_repeated_rows() {
    let (store, cfg1) = mit_setup(1, 12);
    let mut rng = Rng::new(120);
    let h = rand_mat(1, 4, &mut rng);
    let e = rand_mat(1, 4, &mut rng);
    let mut x = add(&h, &e);
    for l in 0..2 {
        x = block(&x, &store, &format!("mit.blocks.{l}"), 1);
    }
    assert!(max_diff(&run_mit(&store, &cfg1, &h, &e), &x[0]) < 1e-12);

    let cfg3 = EncoderConfig { frames: 3, ..cfg1 };
    let rows = vec![h[0].clone(); 3];
    let zero3 = vec![vec![0.0; 4]; 3];
    let single = run_mit(&store, &cfg1, &h, &[vec![0.0; 4]].to_vec());
    assert!(max_diff(&run_mit(&store, &cfg3, &rows, &zero3), &single) < 1e-12);
}

#[test]
fn clip_order_is_ignored_without_temporal_code() {
    let cfg = EncoderConfig {
        frames: 3,
        cct_depth: 2,
        ..tiny_cfg()
    };
    let mut store = full_store(&cfg, 13);
    *store.get_mut("mit.pos").unwrap() = Tensor::zeros(&[3, 4]);
    let mut rng = Rng::new(130);
    let clip = clip_of((0..3).map(|_| random_frame(2, 4, &mut rng)).collect());
    let encode = |c: &VideoClip| {
        let mut tape = Tape::new();
        let enc = VideoEncoder::bind(&mut tape, &store, &cfg).unwrap();
        let (v, _) = enc.encode(&mut tape, c).unwrap();
        tape.value(v).data().to_vec()
    };
    assert!(max_diff(&encode(&clip), &encode(&clip.permuted(&[2, 0, 1]))) < 1e-9);
}

#[test]
fn image_weights_are_inherited_bitwise() {
    let cfg = EncoderConfig {
        cct_depth: 2,
        ..tiny_cfg()
    };
    let mut rng = Rng::new(14);
    let mut image = ParamStore::new();
    VideoEncoder::init_image_params(&cfg, &mut image, &mut rng);
    randomize(&mut image, 0.3, &mut rng);
    let video = init_from_image_weights(&cfg, &cfg, &image, &mut rng).unwrap();
    for (name, p) in image.iter() {
        let got = video.param(name).unwrap();
        assert!(got.value.bitwise_eq(&p.value), "{name}");
        assert_eq!(got.origin, Origin::Inherited);
    }
    for name in [
        "visual.blocks.0.msg.w",
        "visual.blocks.1.cfa.q.w",
        "mit.pos",
        "mit.blocks.0.attn.q.w",
    ] {
        assert_eq!(video.param(name).unwrap().origin, Origin::Fresh, "{name}");
    }
    assert!(video
        .get("visual.blocks.1.cfa.o.w")
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));

    let mut tape = Tape::new();
    let block = CctBlock::bind(&mut tape, &video, "visual.blocks.0", 1).unwrap();
    let m = tape.constant(to_tensor(&rand_mat(2, 4, &mut rng))).unwrap();
    let fused = block.fuse(&mut tape, m).unwrap();
    assert!(tape.value(fused).bitwise_eq(tape.value(m)));

    let wide = EncoderConfig { dim: 8, ..cfg };
    assert!(init_from_image_weights(&wide, &cfg, &image, &mut rng).is_err());
}
