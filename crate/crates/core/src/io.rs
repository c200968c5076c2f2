//! File formats: JSON objects for models and policies, newline-delimited
//! JSON for datasets, a bare label array for partitions. Loaders validate
//! and reject broken files with the full violation report.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::abstraction::Partition;
use crate::error::{OpeError, Result};
use crate::mdp::{validate_mdp, validate_policy, Dataset, MdpModel, PolicyTable, Step, Trajectory};
use crate::solver::SolveCache;

#[derive(Serialize, Deserialize)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// `[s][a][s']`
    transition: Vec<Vec<Vec<f64>>>,
    /// `[a][s]`
    reward: Vec<Vec<f64>>,
    reward_noise_std: f64,
    initial: Vec<f64>,
}

fn shape_err(what: &str) -> OpeError {
    OpeError::Validation(format!("{what} is ragged or does not match the declared sizes"))
}

pub fn load_mdp(path: impl AsRef<Path>) -> Result<MdpModel<f64>> {
    let file: MdpFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    let (ns, na) = (file.n_states, file.n_actions);
    let mut transition = Array3::zeros((ns, na, ns));
    if file.transition.len() != ns {
        return Err(shape_err("transition"));
    }
    for (s, per_a) in file.transition.iter().enumerate() {
        if per_a.len() != na {
            return Err(shape_err("transition"));
        }
        for (a, row) in per_a.iter().enumerate() {
            if row.len() != ns {
                return Err(shape_err("transition"));
            }
            for (sp, &p) in row.iter().enumerate() {
                transition[[s, a, sp]] = p;
            }
        }
    }
    if file.reward.len() != na || file.reward.iter().any(|r| r.len() != ns) {
        return Err(shape_err("reward"));
    }
    let reward = Array2::from_shape_fn((na, ns), |(a, s)| file.reward[a][s]);
    if file.initial.len() != ns {
        return Err(shape_err("initial"));
    }
    let mdp = MdpModel {
        n_states: ns,
        n_actions: na,
        gamma: file.gamma,
        transition,
        reward,
        reward_noise_std: file.reward_noise_std,
        initial: Array1::from_vec(file.initial),
    };
    validate_mdp(&mdp).into_result()?;
    Ok(mdp)
}

pub fn save_mdp(path: impl AsRef<Path>, mdp: &MdpModel<f64>) -> Result<()> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let file = MdpFile {
        n_states: ns,
        n_actions: na,
        gamma: mdp.gamma,
        transition: (0..ns)
            .map(|s| (0..na).map(|a| (0..ns).map(|sp| mdp.transition[[s, a, sp]]).collect()).collect())
            .collect(),
        reward: (0..na).map(|a| (0..ns).map(|s| mdp.reward[[a, s]]).collect()).collect(),
        reward_noise_std: mdp.reward_noise_std,
        initial: mdp.initial.to_vec(),
    };
    write_json(path, &file)
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    /// `[s][a]`
    probs: Vec<Vec<f64>>,
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyTable<f64>> {
    let file: PolicyFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    let ns = file.probs.len();
    if ns == 0 {
        return Err(OpeError::Validation("policy file has no rows".into()));
    }
    let na = file.probs[0].len();
    if file.probs.iter().any(|r| r.len() != na) {
        return Err(shape_err("probs"));
    }
    let policy = PolicyTable::new(Array2::from_shape_fn((ns, na), |(s, a)| file.probs[s][a]));
    validate_policy(&policy, ns, na).into_result()?;
    Ok(policy)
}

pub fn save_policy(path: impl AsRef<Path>, policy: &PolicyTable<f64>) -> Result<()> {
    let file = PolicyFile {
        probs: (0..policy.n_states())
            .map(|s| (0..policy.n_actions()).map(|a| policy.probs[[s, a]]).collect())
            .collect(),
    };
    write_json(path, &file)
}

/// One dataset record per line; `t` is 1-based within its trajectory.
#[derive(Serialize, Deserialize)]
struct StepRecord {
    traj: usize,
    t: usize,
    s: usize,
    a: usize,
    r: f64,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset<f64>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut per_traj: Vec<Vec<StepRecord>> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line)?;
        if rec.traj >= per_traj.len() {
            per_traj.resize_with(rec.traj + 1, Vec::new);
        }
        per_traj[rec.traj].push(rec);
    }
    let mut trajectories = Vec::with_capacity(per_traj.len());
    for (i, mut recs) in per_traj.into_iter().enumerate() {
        recs.sort_by_key(|r| r.t);
        if recs.is_empty() {
            return Err(OpeError::Validation(format!("trajectory {i} has no records")));
        }
        for (k, rec) in recs.iter().enumerate() {
            if rec.t != k + 1 {
                return Err(OpeError::Validation(format!(
                    "trajectory {i}: expected t={} in order, found t={}",
                    k + 1,
                    rec.t
                )));
            }
        }
        trajectories.push(Trajectory {
            steps: recs.into_iter().map(|r| Step { state: r.s, action: r.a, reward: r.r }).collect(),
        });
    }
    if trajectories.is_empty() {
        return Err(OpeError::EmptyDataset);
    }
    Ok(Dataset::new(trajectories, None))
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset<f64>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (i, traj) in data.trajectories.iter().enumerate() {
        for (k, st) in traj.steps.iter().enumerate() {
            let rec = StepRecord { traj: i, t: k + 1, s: st.state, a: st.action, r: st.reward };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Partition files are the bare `block_of` array.
pub fn load_partition(path: impl AsRef<Path>) -> Result<Partition> {
    let labels: Vec<usize> = serde_json::from_str(&fs::read_to_string(path)?)?;
    if labels.is_empty() {
        return Err(OpeError::Validation("partition file is empty".into()));
    }
    Ok(Partition::from_block_of(&labels))
}

pub fn save_partition(path: impl AsRef<Path>, part: &Partition) -> Result<()> {
    write_json(path, &part.block_of().to_vec())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Serializable view of a full solve, tables as nested arrays.
#[derive(Serialize)]
pub struct SolveFile {
    pub j_pi: f64,
    /// `[a][s]`
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub p_inf: Vec<f64>,
    pub d_pi: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    /// `[s'][a][s]`
    pub backward: Vec<Vec<Vec<f64>>>,
}

fn table(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

impl SolveFile {
    pub fn from_cache(cache: &SolveCache<f64>) -> Self {
        let n = cache.p_inf.len();
        let na = cache.q.dim().0;
        SolveFile {
            j_pi: cache.j_pi,
            q: table(&cache.q),
            v: cache.v.to_vec(),
            rho: table(&cache.rho),
            p_inf: cache.p_inf.to_vec(),
            d_pi: table(&cache.d_pi),
            w: table(&cache.w),
            backward: (0..n)
                .map(|sp| {
                    (0..na).map(|a| (0..n).map(|s| cache.backward[[sp, a, s]]).collect()).collect()
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{random_mdp, random_policy};
    use crate::sim::{sample_trajectories, InitMode};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("ope-io-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(format!("{}-{}", std::process::id(), name))
    }

    #[test]
    fn mdp_round_trip_is_exact() {
        let mdp = random_mdp(4, 2, 7, 0.8, 1.5, 0.93).unwrap();
        let path = tmp("mdp.json");
        save_mdp(&path, &mdp).unwrap();
        let back = load_mdp(&path).unwrap();
        assert_eq!(mdp.transition, back.transition);
        assert_eq!(mdp.reward, back.reward);
        assert_eq!(mdp.initial, back.initial);
        assert_eq!(mdp.gamma, back.gamma);
    }

    #[test]
    fn invalid_mdp_file_is_rejected_with_report() {
        let mdp = random_mdp(3, 2, 9, 1.0, 1.0, 0.9).unwrap();
        let path = tmp("bad-mdp.json");
        save_mdp(&path, &mdp).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("0.9", "1.7");
        fs::write(&path, text).unwrap();
        let err = load_mdp(&path).unwrap_err().to_string();
        assert!(err.contains("gamma") || err.contains("sum"), "{err}");
    }

    #[test]
    fn policy_round_trip_and_rejection() {
        let pi = random_policy(3, 2, 11, 1.0).unwrap();
        let path = tmp("pi.json");
        save_policy(&path, &pi).unwrap();
        assert_eq!(load_policy(&path).unwrap().probs, pi.probs);
        fs::write(&path, r#"{"probs": [[0.9, 0.3], [0.5, 0.5]]}"#).unwrap();
        assert!(load_policy(&path).is_err());
    }

    #[test]
    fn dataset_round_trip_preserves_records() {
        let mdp = random_mdp(3, 2, 13, 1.0, 1.0, 0.9).unwrap();
        let b = random_policy(3, 2, 14, 1.0).unwrap();
        let data = sample_trajectories(&mdp, &b, 5, 4, 99, InitMode::Rho0).unwrap();
        let path = tmp("data.ndjson");
        save_dataset(&path, &data).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.n_trajectories(), 5);
        assert_eq!(back.horizon, 4);
        for (t1, t2) in data.trajectories.iter().zip(&back.trajectories) {
            for (s1, s2) in t1.steps.iter().zip(&t2.steps) {
                assert_eq!((s1.state, s1.action), (s2.state, s2.action));
                assert_eq!(s1.reward, s2.reward);
            }
        }
    }

    #[test]
    fn dataset_records_may_arrive_out_of_order() {
        let path = tmp("shuffled.ndjson");
        fs::write(
            &path,
            concat!(
                r#"{"traj":1,"t":1,"s":0,"a":0,"r":1.0}"#, "\n",
                r#"{"traj":0,"t":2,"s":1,"a":1,"r":2.0}"#, "\n",
                r#"{"traj":0,"t":1,"s":0,"a":0,"r":0.5}"#, "\n",
            ),
        )
        .unwrap();
        let data = load_dataset(&path).unwrap();
        assert_eq!(data.trajectories[0].steps[1].reward, 2.0);
        assert_eq!(data.trajectories[1].steps.len(), 1);
    }

    #[test]
    fn dataset_with_gap_in_t_is_rejected() {
        let path = tmp("gap.ndjson");
        fs::write(
            &path,
            concat!(
                r#"{"traj":0,"t":1,"s":0,"a":0,"r":0.0}"#, "\n",
                r#"{"traj":0,"t":3,"s":0,"a":0,"r":0.0}"#, "\n",
            ),
        )
        .unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn partition_round_trip_canonicalizes() {
        let path = tmp("part.json");
        fs::write(&path, "[5, 5, 2, 5]").unwrap();
        let part = load_partition(&path).unwrap();
        assert_eq!(part.block_of(), &[0, 0, 1, 0]);
        save_partition(&path, &part).unwrap();
        assert_eq!(load_partition(&path).unwrap(), part);
    }

    #[test]
    fn solve_file_serializes_all_tables() {
        let mdp = random_mdp(3, 2, 23, 1.0, 1.0, 0.9).unwrap();
        let pi = random_policy(3, 2, 24, 1.0).unwrap();
        let b = random_policy(3, 2, 25, 1.0).unwrap();
        let cache = SolveCache::compute(&mdp, &pi, &b).unwrap();
        let value = serde_json::to_value(SolveFile::from_cache(&cache)).unwrap();
        for key in ["j_pi", "q", "v", "rho", "p_inf", "d_pi", "w", "backward"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
    }
}
