use acgs::corpus::Vocabulary;
use acgs::models::{Architecture, DiscriminatorConfig, DiscriminatorParams, GeneratorConfig, GeneratorParams};
use acgs::{ParamSet, Tensor};
use acgs_cli::checkpoint::{
    decode, encode, load_checkpoint, load_discriminator, load_generator, save_checkpoint,
    save_discriminator, save_generator, CheckpointError, MAGIC, VERSION,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vocab() -> Vocabulary {
    let tokens = ["<pad>", "<bos>", "<eos>", "<unk>", "hello", "wörld", "!", "ça"];
    Vocabulary::from_tokens(tokens.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn random_params(seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    for (name, dims) in [("b", vec![3usize]), ("a.w", vec![2, 5]), ("z", vec![1, 2, 3]), ("s", vec![])] {
        let n: usize = dims.iter().product();
        p.insert(name, Tensor::new(dims, (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap());
    }
    p
}

fn narrowed(p: &ParamSet) -> ParamSet {
    p.iter().map(|(n, t)| (n.clone(), t.map(|v| v as f32 as f64))).collect()
}

fn with_crc(mut body: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&body);
    body.extend_from_slice(&crc.to_le_bytes());
    body
}

#[test]
fn roundtrip_is_bit_exact_at_f32_and_resave_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let params = random_params(1);
    save_checkpoint(&path, &vocab(), &params).unwrap();
    let (v, loaded) = load_checkpoint(&path).unwrap();
    assert_eq!(v, vocab());
    assert_eq!(loaded, narrowed(&params));

    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &v, &loaded).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    assert!(!dir.path().join("m.ckpt.tmp").exists());
}

#[test]
fn header_layout() {
    let bytes = encode(vocab().tokens(), &random_params(2)).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 5);
    assert_eq!(&bytes[16..21], b"<pad>");
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
}

#[test]
fn empty_parameter_set_is_a_valid_file() {
    let bytes = encode(&[], &ParamSet::new()).unwrap();
    assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 4);
    assert_eq!(&bytes[12..16], &0u32.to_le_bytes());
    let (tokens, params) = decode(&bytes).unwrap();
    assert!(tokens.is_empty() && params.is_empty());
}

#[test]
fn any_flipped_byte_is_detected() {
    let bytes = encode(vocab().tokens(), &random_params(3)).unwrap();
    for i in 8..bytes.len() {
        let mut bad = bytes.clone();
        bad[i] ^= 0x10;
        assert!(matches!(decode(&bad), Err(CheckpointError::Corrupt { .. })), "byte {i}");
    }
}

#[test]
fn bad_magic_and_version_are_reported() {
    let bytes = encode(vocab().tokens(), &random_params(4)).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic)));
    assert!(matches!(decode(b"AC"), Err(CheckpointError::BadMagic)));

    let mut body = bytes[..bytes.len() - 4].to_vec();
    body[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(decode(&with_crc(body)), Err(CheckpointError::UnsupportedVersion(7))));
}

#[test]
fn inconsistent_sizes_are_format_errors() {
    let bytes = encode(&[], &random_params(5)).unwrap();
    let body = &bytes[..bytes.len() - 4];
    // Truncated payload with a valid CRC.
    let short = with_crc(body[..body.len() - 3].to_vec());
    assert!(matches!(decode(&short), Err(CheckpointError::Format(_))));
    // Extra bytes before the CRC.
    let mut long = body.to_vec();
    long.extend_from_slice(&[0, 0]);
    assert!(matches!(decode(&with_crc(long)), Err(CheckpointError::Format(_))));
}

#[test]
fn models_roundtrip_with_their_configs() {
    let dir = tempfile::tempdir().unwrap();
    let v = vocab();
    for arch in [Architecture::Seq2Seq, Architecture::Transformer] {
        let config = GeneratorConfig {
            embed_dim: 8,
            hidden_dim: 8,
            ff_dim: 16,
            heads: 2,
            ..GeneratorConfig::for_arch(arch, v.len())
        };
        let gen = GeneratorParams::new(config, 9).unwrap();
        let path = dir.path().join("gen.ckpt");
        save_generator(&path, &v, &gen).unwrap();
        let (v2, loaded) = load_generator(&path).unwrap();
        assert_eq!(v2, v);
        assert_eq!(loaded.config, gen.config);
        assert_eq!(loaded.params, narrowed(&gen.params));
        assert!(matches!(load_discriminator(&path), Err(CheckpointError::WrongKind(_))));
    }
    let disc = DiscriminatorParams::new(DiscriminatorConfig::hierarchical(v.len()), 3).unwrap();
    let path = dir.path().join("disc.ckpt");
    save_discriminator(&path, &v, &disc).unwrap();
    let (_, loaded) = load_discriminator(&path).unwrap();
    assert_eq!(loaded.config, disc.config);
    assert!(matches!(load_generator(&path), Err(CheckpointError::WrongKind(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("nope")), Err(CheckpointError::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_decode_encode_is_stable(
        values in prop::collection::vec(-1e6f64..1e6, 1..40),
        split in 1usize..40,
        tokens in prop::collection::vec("[a-zé!?]{1,6}", 0..6),
    ) {
        let split = split.min(values.len());
        let mut p = ParamSet::new();
        p.insert("first", Tensor::vector(values[..split].to_vec()));
        if split < values.len() {
            p.insert("second", Tensor::matrix(1, values.len() - split, values[split..].to_vec()).unwrap());
        }
        let bytes = encode(&tokens, &p).unwrap();
        let (t2, p2) = decode(&bytes).unwrap();
        prop_assert_eq!(&t2, &tokens);
        prop_assert_eq!(&p2, &narrowed(&p));
        prop_assert_eq!(encode(&t2, &p2).unwrap(), bytes);
    }
}
