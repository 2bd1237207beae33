use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rnn_asr::container::*;
use rnn_asr::decoder::Alphabet;
use rnn_asr::quant::dequantize;
use rnn_asr::rnn::{LstmNetwork, QuantConfig};

fn float_model(seed: u64) -> Model {
    let alphabet = Alphabet::standard();
    let net = LstmNetwork::random(7, 2, 9, alphabet.am_dim(), &mut ChaCha8Rng::seed_from_u64(seed));
    Model::new(ModelKind::Acoustic, alphabet, net).unwrap()
}

#[test]
fn write_read_write_is_byte_identical() {
    for seed in 0..5 {
        let q = quantize_model(&float_model(seed), &QuantConfig::default()).unwrap();
        for shadow in [true, false] {
            let mut m = q.clone();
            m.float_shadow = shadow;
            let a = to_bytes(&m).unwrap();
            let back = from_bytes(&a).unwrap();
            assert_eq!(back.float_shadow, shadow);
            assert_eq!(back.network.quantized, m.network.quantized);
            assert_eq!(to_bytes(&back).unwrap(), a);
        }
        let f = float_model(seed);
        let a = to_bytes(&f).unwrap();
        let back = from_bytes(&a).unwrap();
        assert!(back.network.quantized.is_none());
        assert_eq!(back.network.layers, f.network.layers);
        assert_eq!(to_bytes(&back).unwrap(), a);
    }
}

#[test]
fn quantized_values_stay_within_half_a_step() {
    let m = float_model(11);
    let q = quantize_model(&m, &QuantConfig::default()).unwrap();
    let loaded = from_bytes(&to_bytes(&q).unwrap()).unwrap();
    let qn = loaded.network.quantized.as_ref().unwrap();
    for (layer, p) in qn.layers.iter().zip(&m.network.layers) {
        for g in 0..4 {
            let step = layer.wx[g].scheme.step();
            let max = layer.wx[g].scheme.max_value();
            for (a, b) in dequantize(&layer.wx[g]).iter().zip(p.wx[g].data()) {
                // saturated values sit at the range edge instead
                if b.abs() <= max {
                    assert!((a - b).abs() <= step / 2.0 + 1e-15);
                }
            }
        }
    }
}

#[test]
fn requantizing_is_a_fixed_point_in_value() {
    let q1 = quantize_model(&float_model(3), &QuantConfig::default()).unwrap();
    let mut stripped = from_bytes(&to_bytes(&Model { float_shadow: false, ..q1.clone() }).unwrap()).unwrap();
    stripped.network.quantized = None;
    let q2 = quantize_model(&stripped, &QuantConfig::default()).unwrap();
    let (a, b) = (q1.network.quantized.unwrap(), q2.network.quantized.unwrap());
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        for (ta, tb) in la.wx.iter().chain(&la.wh).chain(&la.peephole).chain(&la.bias).zip(lb.wx.iter().chain(&lb.wh).chain(&lb.peephole).chain(&lb.bias)) {
            assert_eq!(dequantize(ta), dequantize(tb));
        }
    }
    assert_eq!(dequantize(&a.output.weights), dequantize(&b.output.weights));
}

#[test]
fn corruption_is_detected() {
    let q = quantize_model(&float_model(1), &QuantConfig::default()).unwrap();
    let bytes = to_bytes(&q).unwrap();
    let mut flipped = bytes.clone();
    flipped[40] ^= 0x10;
    assert!(matches!(from_bytes(&flipped), Err(ContainerError::Checksum { .. })));
    assert!(matches!(from_bytes(b"nope"), Err(ContainerError::BadMagic)));
    let mut v2 = bytes.clone();
    v2[6] = 2;
    assert!(matches!(from_bytes(&v2), Err(ContainerError::Version(2))));
    assert!(from_bytes(&bytes[..bytes.len() - 9]).is_err());
}

#[test]
fn payload_size_matches_packing() {
    let q = quantize_model(&float_model(2), &QuantConfig::default()).unwrap();
    let quant_only = to_bytes(&Model { float_shadow: false, ..q.clone() }).unwrap();
    let with_shadow = to_bytes(&q).unwrap();
    let params = q.network.param_count();
    // shadows add 8 bytes per parameter plus per-record headers
    assert!(with_shadow.len() - quant_only.len() >= 8 * params);
    let qn = q.network.quantized.as_ref().unwrap();
    let packed: usize = qn
        .layers
        .iter()
        .flat_map(|l| l.wx.iter().chain(&l.wh).chain(&l.peephole).chain(&l.bias))
        .chain([&qn.output.weights, &qn.output.bias])
        .map(|t| packed_len(t.len(), 6))
        .sum();
    assert!(quant_only.len() > packed && quant_only.len() < packed + 2048);
}

#[test]
fn alphabet_mismatch_is_rejected() {
    let alphabet = Alphabet::letters(3);
    let net = LstmNetwork::random(4, 1, 5, 5, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(Model::new(ModelKind::Acoustic, alphabet.clone(), net.clone()).is_err());
    let net = LstmNetwork::random(4, 1, 5, 4, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(Model::new(ModelKind::Acoustic, alphabet.clone(), net.clone()).is_ok());
    assert!(Model::new(ModelKind::CharLm, alphabet, net).is_err());
}
