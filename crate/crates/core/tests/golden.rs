//! Frozen outputs. Regenerate with `UPDATE_GOLDEN=1 cargo test --test golden`
//! only after an intended numerical change.

use std::path::{Path, PathBuf};

use guided_langevin::config::default_config;
use guided_langevin::sampler::Sampler;
use guided_langevin::trajectory::{csv_header, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn golden(name: &str, actual: &str) {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name].iter().collect();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden mismatch in {name}");
}

#[test]
fn trajectory_header() {
    golden("trajectory_header.txt", &format!("{}\n", csv_header()));
}

#[test]
fn first_step_of_the_demo() {
    let prep = default_config().build(Path::new(".")).unwrap();
    let s = Sampler::new(&prep.backbone, prep.sampler, prep.step_rule).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut state = s.init_state(&prep.source, &mut rng).unwrap();
    let out = s.step(&mut state, &mut prep.guidance.clone(), &mut rng).unwrap();
    let traj = Trajectory {
        records: vec![out.record],
        snapshots: Vec::new(),
        snapshot_stride: 0,
    };
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).unwrap();
    let latent: Vec<String> = state.z.iter().map(|x| format!("{:016x}", x.to_bits())).collect();
    let text = format!("{}latent_bits,{}\n", String::from_utf8(csv).unwrap(), latent.join(","));
    golden("demo_step0.csv", &text);
}
