use std::path::PathBuf;

use dgrmil::bags::{read_csv, write_csv};
use dgrmil::benchmark::{load_mil_benchmark, Benchmark};
use dgrmil::config::{DataFormat, RunConfig, KEYS};
use dgrmil::dgrmil_core::data::{generate_synthetic, SyntheticSpec, ZScore};
use dgrmil::dgrmil_core::model::{Architecture, ModelConfig, ModelParams};
use dgrmil::params_io::{decode, encode, manifest, SavedModel};
use dgrmil::CliError;
use proptest::prelude::*;

fn musk1() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/musk1.csv")
}

fn spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_pos_bags: 4,
        n_neg_bags: 3,
        instances_per_bag: (2, 6),
        feature_dim: 3,
        n_pos_clusters: 2,
        pos_fraction: 0.3,
        cluster_separation: 4.0,
        seed,
    }
}

fn to_string(d: &dgrmil::dgrmil_core::data::Dataset) -> String {
    let mut out = Vec::new();
    write_csv(d, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

fn data_error(r: Result<impl std::fmt::Debug, CliError>) -> String {
    match r {
        Err(CliError::Data(msg)) => msg,
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let d = generate_synthetic(&spec(3)).unwrap();
    let text = to_string(&d);
    assert!(text.starts_with("bag_id,instance_id,label,f0,f1,f2\n"));
    assert!(!text.contains('\r'));
    let back = read_csv(text.as_bytes(), "synthetic").unwrap();
    assert_eq!(back, d);
    assert_eq!(to_string(&back), text);
}

#[test]
fn csv_rows_of_a_bag_may_interleave() {
    let text = "bag_id,instance_id,label,f0\na,a0,0,1.5\nb,b0,1,2\na,a1,1,3\nb,b1,0,-1\n";
    let d = read_csv(text.as_bytes(), "t").unwrap();
    let ids: Vec<&str> = d.bags.iter().map(|b| b.id.as_str()).collect();
    assert_eq!(ids, ["a", "b"]);
    assert_eq!(d.bags[0].instance_ids, ["a0", "a1"]);
    assert_eq!(d.bags[0].features.as_slice(), &[1.5, 3.0]);
    assert_eq!(d.bags[0].label, 1);
    assert_eq!(d.bags[0].instance_labels.as_deref(), Some(&[0u8, 1][..]));
    assert_eq!(d.bags[1].label, 1);
}

#[test]
fn csv_errors_name_the_line() {
    let wrong_header = "bag,instance_id,label,f0\n";
    assert!(data_error(read_csv(wrong_header.as_bytes(), "t")).contains("header"));
    let short = "bag_id,instance_id,label,f0,f1\na,a0,0,1\n";
    let msg = data_error(read_csv(short.as_bytes(), "t"));
    assert!(msg.contains("line 2") && msg.contains("schema"), "{msg}");
    let label = "bag_id,instance_id,label,f0\na,a0,0,1\na,a1,2,1\n";
    assert!(data_error(read_csv(label.as_bytes(), "t")).contains("line 3"));
    let feature = "bag_id,instance_id,label,f0\na,a0,0,x\n";
    assert!(data_error(read_csv(feature.as_bytes(), "t")).contains("line 2"));
    assert!(data_error(read_csv("".as_bytes(), "t")).contains("empty"));
    assert!(data_error(read_csv("bag_id,instance_id,label,f0\n".as_bytes(), "t")).contains("empty"));
}

#[test]
fn musk1_loads_with_documented_shape() {
    let a = load_mil_benchmark(&musk1(), Benchmark::Musk1).unwrap();
    assert!(a.warnings.is_empty(), "{:?}", a.warnings);
    let d = &a.dataset;
    assert_eq!((d.len(), d.feature_dim), (92, 166));
    assert_eq!(d.class_counts(), (45, 47));
    assert_eq!(d.instance_count(), 476);
    assert!(d.bags.iter().all(|b| b.instance_labels.is_none()));
    assert_eq!(a, load_mil_benchmark(&musk1(), Benchmark::Musk1).unwrap());
}

#[test]
fn benchmark_mapping_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.csv");
    std::fs::write(&path, "0,x,1,2\n1,y,3,4\n0,x,5,6\n0,y,7,8\n0,z,0,0\n").unwrap();
    let a = load_mil_benchmark(&path, Benchmark::Fox).unwrap();
    let d = &a.dataset;
    assert_eq!(d.bags.iter().map(|b| b.label).collect::<Vec<_>>(), [0, 1, 0]);
    assert_eq!(d.bags[0].features.as_slice(), &[1.0, 2.0, 5.0, 6.0]);
    assert_eq!(a.warnings.len(), 2);
    std::fs::write(&path, "0,x,1,2\n1,y,3\n").unwrap();
    assert!(data_error(load_mil_benchmark(&path, Benchmark::Fox)).contains("line 2"));
    assert!("musk3".parse::<Benchmark>().is_err());
    assert_eq!("MUSK2".parse::<Benchmark>().unwrap(), Benchmark::Musk2);
}

fn saved(architecture: Architecture, seed: u64, normalize: bool) -> SavedModel {
    let config = ModelConfig::new(3, 8, 2, 2).with_architecture(architecture);
    let params = ModelParams::init(config, seed).unwrap();
    let normalization = normalize.then(|| ZScore::fit(&generate_synthetic(&spec(seed)).unwrap()).unwrap());
    SavedModel { params, normalization }
}

#[test]
fn params_round_trip_and_reject_corruption() {
    for arch in [Architecture::DgrMil, Architecture::AbMil] {
        for normalize in [false, true] {
            let m = saved(arch, 5, normalize);
            let bytes = encode(&m);
            assert_eq!(decode(&bytes).unwrap(), m);
        }
    }
    let bytes = encode(&saved(Architecture::DgrMil, 1, true));
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(data_error(decode(&bad_magic)).contains("magic"));
    assert!(data_error(decode(&bytes[..bytes.len() - 1])).contains("truncated"));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(data_error(decode(&trailing)).contains("trailing"));
    let mut version = bytes.clone();
    version[8] = 9;
    assert!(data_error(decode(&version)).contains("version"));
}

#[test]
fn manifest_offsets_point_at_tensor_data() {
    let m = saved(Architecture::DgrMil, 2, false);
    let bytes = encode(&m);
    let text = manifest(&m);
    let leaves = m.params.weights.leaves();
    let mut count = 0;
    for (line, leaf) in text.lines().filter(|l| l.starts_with("tensor ")).zip(leaves) {
        let offset: usize = line.rsplit(' ').next().unwrap().parse().unwrap();
        let first = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        assert_eq!(first.to_bits(), leaf.as_slice()[0].to_bits(), "{line}");
        count += 1;
    }
    assert_eq!(count, m.params.weights.leaves().len());
    assert!(text.contains(&format!("param-count = {}", m.params.param_count())));
}

#[test]
fn config_text_round_trips_every_key() {
    let mut c = RunConfig::default();
    c.apply_overrides(&["epochs=30", "momentum=0.5", "architecture=ab-mil", "format=musk1", "data=x.csv"]).unwrap();
    let text = c.to_text();
    for key in KEYS {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key} "))), "{key} missing");
    }
    let back = RunConfig::parse_text(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.format, DataFormat::Benchmark(Benchmark::Musk1));
    assert_eq!(back.train.architecture, Architecture::AbMil);
}

#[test]
fn config_rejects_unknown_and_repeated_keys() {
    let config_error = |r: Result<RunConfig, CliError>| match r {
        Err(CliError::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    };
    assert!(config_error(RunConfig::parse_text("epochs = 3\nlearning-rate = 1\n")).contains("line 2"));
    assert!(config_error(RunConfig::parse_text("seed = 1\nseed = 2\n")).contains("seed"));
    assert!(config_error(RunConfig::parse_text("epochs = many\n")).contains("epochs"));
    let c = RunConfig::parse_text("# comment\n\nseed = 7 # trailing\n").unwrap();
    assert_eq!(c.train.seed, 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip_any_synthetic(seed: u64) {
        let d = generate_synthetic(&spec(seed)).unwrap();
        prop_assert_eq!(read_csv(to_string(&d).as_bytes(), "synthetic").unwrap(), d);
    }

    #[test]
    fn params_round_trip_any_seed(seed: u64, ab: bool) {
        let m = saved(if ab { Architecture::AbMil } else { Architecture::DgrMil }, seed, seed % 2 == 0);
        prop_assert_eq!(decode(&encode(&m)).unwrap(), m);
    }

    #[test]
    fn truncated_params_never_decode(seed: u64, cut in 1usize..64) {
        let bytes = encode(&saved(Architecture::DgrMil, seed, true));
        prop_assert!(decode(&bytes[..bytes.len() - cut]).is_err());
    }
}
