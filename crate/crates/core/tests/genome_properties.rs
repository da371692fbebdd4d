use metamorph_core::genome::{self, Chromosome, GenomeConfig};
use metamorph_core::Shape;
use proptest::prelude::*;

fn configs() -> Vec<GenomeConfig> {
    let mut wide = GenomeConfig::new(Shape::new(17, 9, 3));
    wide.max_genes = 12;
    wide.activation_probability = 0.9;
    vec![
        GenomeConfig::new(Shape::new(32, 32, 3)),
        GenomeConfig::new(Shape::new(5, 40, 1)),
        wide,
    ]
}

#[test]
fn random_chromosomes_are_always_valid() {
    for cfg in configs() {
        for seed in 0..10_000u64 {
            let ch = genome::random_chromosome(&cfg, seed).unwrap();
            let v = genome::validate(&ch, &cfg, cfg.shape);
            assert!(v.is_empty(), "seed {seed}: {v:?}");
            assert_eq!(Chromosome::decode(&ch.encode()).unwrap(), ch);
        }
    }
}

#[test]
fn same_seed_same_chromosome() {
    let cfg = GenomeConfig::new(Shape::new(16, 16, 3));
    for seed in [0, 1, u64::MAX] {
        assert_eq!(
            genome::random_chromosome(&cfg, seed).unwrap(),
            genome::random_chromosome(&cfg, seed).unwrap()
        );
    }
}

#[test]
fn hex_is_the_encoding_in_hex() {
    let cfg = GenomeConfig::new(Shape::new(16, 16, 3));
    let ch = genome::random_chromosome(&cfg, 3).unwrap();
    assert_eq!(ch.to_hex(), hex::encode(ch.encode()));
    assert_eq!(Chromosome::from_hex(&ch.to_hex()).unwrap(), ch);
    assert!(Chromosome::from_hex("zz").is_err());
}

#[test]
fn truncations_are_rejected() {
    let cfg = GenomeConfig::new(Shape::new(16, 16, 3));
    let bytes = genome::random_chromosome(&cfg, 11).unwrap().encode();
    for cut in 0..bytes.len() {
        assert!(Chromosome::decode(&bytes[..cut]).is_err(), "prefix of {cut} bytes decoded");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(Chromosome::decode(&long).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = Chromosome::decode(&bytes);
    }

    #[test]
    fn decode_of_flipped_encoding_is_canonical(seed in any::<u64>(), pos in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let cfg = GenomeConfig::new(Shape::new(16, 16, 3));
        let mut bytes = genome::random_chromosome(&cfg, seed).unwrap().encode();
        let i = pos.index(bytes.len());
        bytes[i] = byte;
        if let Ok(ch) = Chromosome::decode(&bytes) {
            prop_assert_eq!(ch.encode(), bytes);
        }
    }
}
