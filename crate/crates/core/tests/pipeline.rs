use kws_core::decoder::{streaming_decode, DecoderConfig, StreamingDecoder};
use kws_core::frontend::{ArithmeticMode, AudioChunk, FeatureFrame, Frontend, FrontendConfig};
use kws_core::inference::{
    encoder_forward, load_model, AccumMode, Activation, EncoderModel, FrameStacker, InputSpec, Layer, Model, Network,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(channels: usize, stacked: usize, units: usize) -> EncoderModel {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = InputSpec { num_channels: channels, num_stacked_frames: stacked };
    let (inp, hid) = (spec.input_dim(), 24);
    let mut w = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-0.2..0.2)).collect() };
    let l1 = Layer::from_float(&w(inp * hid), &w(hid), inp, hid, Activation::Relu, (-28.0, 28.0)).unwrap();
    let l2 = Layer::from_float(&w(hid * (units + 1)), &w(units + 1), hid, units + 1, Activation::Softmax, (0.0, 8.0)).unwrap();
    EncoderModel::new(Network::new("pipeline", spec, vec![l1, l2]).unwrap(), units).unwrap()
}

fn audio(seconds: usize) -> Vec<i16> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..seconds * 16_000)
        .map(|i| {
            let tone = 4000.0 * (i as f64 * 0.07).sin() * ((i / 4000) % 2) as f64;
            (tone + rng.random_range(-300.0..300.0)) as i16
        })
        .collect()
}

fn stream(config: &FrontendConfig, model: &EncoderModel, samples: &[i16], chunk: usize) -> Vec<f64> {
    let mut fe = Frontend::new(config).unwrap();
    let mut stacker = FrameStacker::new(model.input_spec());
    let mut dec = StreamingDecoder::new(DecoderConfig::new(model.num_units())).unwrap();
    let mut frames: Vec<FeatureFrame> = Vec::new();
    let mut scores = Vec::new();
    for piece in samples.chunks(chunk) {
        frames.clear();
        fe.push(piece, &mut frames);
        for f in &frames {
            if let Some(stacked) = stacker.push(f).unwrap() {
                let p = model.posteriors(&stacked, AccumMode::FixedAccum, f.frame_index).unwrap();
                scores.push(dec.push(&p).unwrap().score);
            }
        }
    }
    scores
}

#[test]
fn streaming_pipeline_matches_batch() {
    let samples = audio(3);
    for mode in [ArithmeticMode::FixedPoint, ArithmeticMode::Float] {
        let config = FrontendConfig { arithmetic_mode: mode, ..FrontendConfig::default() };
        let m = model(config.num_channels, 3, 3);
        let frames = Frontend::process_chunk(&config, &AudioChunk::new(samples.clone())).unwrap();
        let post = encoder_forward(&frames, &m, AccumMode::FixedAccum).unwrap();
        let batch: Vec<f64> = streaming_decode(&post, DecoderConfig::new(3)).unwrap().into_iter().map(|(_, h)| h.score).collect();
        assert_eq!(batch.len(), frames.len() - 2);
        for chunk in [1, 160, 397, 16_000] {
            assert_eq!(stream(&config, &m, &samples, chunk), batch, "{mode:?}, chunk {chunk}");
        }
    }
}

#[test]
fn serialized_model_scores_identically() {
    let m = model(40, 2, 2);
    let Model::Encoder(back) = load_model(&m.to_bytes()).unwrap() else { panic!("kind changed") };
    let frames = Frontend::process_chunk(&FrontendConfig::default(), &AudioChunk::new(audio(1))).unwrap();
    assert_eq!(
        encoder_forward(&frames, &m, AccumMode::FixedAccum).unwrap(),
        encoder_forward(&frames, &back, AccumMode::FixedAccum).unwrap()
    );
    assert_eq!(back.byte_size(), m.to_bytes().len());
}
