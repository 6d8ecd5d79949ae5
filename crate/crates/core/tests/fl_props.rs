mod common;

use fedseq_core::data::{synth_dataset, ClientPartition, LabeledDataset};
use fedseq_core::fedseq::{fedseqinter_run, sequential_train_superclient, FedSeqConfig};
use fedseq_core::fl::{
    evaluate, fedavg_aggregate, feddyn_aggregate, local_train, run_federated, sample_participants,
    Aggregation, ClientUpdate, FederatedConfig, LocalObjective, ObjectiveKind, ServerState,
};
use fedseq_core::grouping::Superclient;
use fedseq_core::nn::{LayerSlot, ModelSpec, ParamVector, Role, TrainHyper};
use rand::{Rng as _, SeedableRng};

fn scalar(v: f64) -> ParamVector {
    let slot = LayerSlot {
        name: "w".into(),
        role: Role::Classifier,
        offset: 0,
        len: 1,
    };
    ParamVector::new(vec![v], vec![slot]).unwrap()
}

fn update(params: ParamVector, n: usize, id: usize) -> ClientUpdate {
    ClientUpdate {
        params,
        num_samples: n,
        id,
        grad_memory: None,
    }
}

#[test]
fn fedavg_examples() {
    assert_eq!(
        fedavg_aggregate(&[update(scalar(2.5), 7, 0)]).unwrap(),
        scalar(2.5)
    );
    let v = scalar(1.25);
    let neg = scalar(-1.25);
    assert_eq!(
        fedavg_aggregate(&[update(v, 4, 0), update(neg, 4, 1)])
            .unwrap()
            .values()[0],
        0.0
    );
    let out = fedavg_aggregate(&[update(scalar(0.0), 1, 0), update(scalar(4.0), 3, 1)]).unwrap();
    assert_eq!(out.values()[0], 3.0);
    assert!(fedavg_aggregate(&[]).is_err());
}

fn random_updates(
    rng: &mut rand_chacha::ChaCha8Rng,
    spec: &ModelSpec,
    count: usize,
) -> Vec<ClientUpdate> {
    (0..count)
        .map(|id| {
            let p = spec.init(rng.random());
            update(p, rng.random_range(1..50), id)
        })
        .collect()
}

#[test]
fn fedavg_is_idempotent_and_order_free() {
    let spec = ModelSpec::mlp(3, vec![4], 2).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let theta = spec.init(4);
    let copies: Vec<_> = (0..6).map(|id| update(theta.clone(), id + 1, id)).collect();
    assert_eq!(fedavg_aggregate(&copies).unwrap(), theta);

    let ups = random_updates(&mut rng, &spec, 5);
    let mut reversed = ups.clone();
    reversed.reverse();
    assert_eq!(
        fedavg_aggregate(&ups).unwrap(),
        fedavg_aggregate(&reversed).unwrap()
    );
}

#[test]
fn feddyn_examples() {
    // participants returning the previous model leave it unchanged
    let spec = ModelSpec::mlp(3, vec![4], 2).unwrap();
    let prev = spec.init(1);
    let mut state = ServerState::new(prev.clone(), 10);
    let same: Vec<_> = (0..3).map(|id| update(prev.clone(), 5, id)).collect();
    assert_eq!(feddyn_aggregate(&same, &mut state).unwrap(), prev);
    assert!(state.h.values().iter().all(|&h| h == 0.0));

    // one participant, m = 1, theta_prev = 0, theta_k = 2
    let mut state = ServerState::new(scalar(0.0), 1);
    let out = feddyn_aggregate(&[update(scalar(2.0), 3, 0)], &mut state).unwrap();
    let (expected, h) = common::feddyn_oracle(&[vec![2.0]], &[0.0], &[0.0], 1);
    assert_eq!(out.values(), expected.as_slice());
    assert_eq!(state.h.values(), h.as_slice());
    assert_eq!(out.values()[0], 0.0);
}

#[test]
fn feddyn_is_linear() {
    let spec = ModelSpec::mlp(2, vec![3], 2).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let ups = random_updates(&mut rng, &spec, 4);
    let prev = spec.init(77);
    let a = 2.5;
    let scaled = |p: &ParamVector| {
        let mut q = p.clone();
        q.scale(a);
        q
    };
    let mut s1 = ServerState::new(prev.clone(), 6);
    let base = feddyn_aggregate(&ups, &mut s1).unwrap();
    let mut s2 = ServerState::new(scaled(&prev), 6);
    let ups2: Vec<_> = ups
        .iter()
        .map(|u| update(scaled(&u.params), u.num_samples, u.id))
        .collect();
    let out = feddyn_aggregate(&ups2, &mut s2).unwrap();
    assert!(common::max_abs_diff(out.values(), scaled(&base).values()) < 1e-12);
}

fn toy(seed: u64) -> (ModelSpec, LabeledDataset, ClientPartition) {
    let data = synth_dataset(3, 20, 4, 2.0, seed).unwrap();
    let clients: Vec<Vec<usize>> = (0..5).map(|k| (k * 12..k * 12 + 12).collect()).collect();
    let partition = ClientPartition::new(clients, data.len()).unwrap();
    (ModelSpec::mlp(4, vec![6], 3).unwrap(), data, partition)
}

fn hyper(lr: f64) -> TrainHyper {
    TrainHyper {
        lr,
        momentum: 0.5,
        weight_decay: 1e-3,
        batch_size: 5,
    }
}

#[test]
fn vanishing_regularisers_match_plain_training() {
    let (spec, data, partition) = toy(1);
    let init = spec.init(3);
    let anchor = spec.init(4);
    let idx = partition.indices(2);
    let run = |obj: &LocalObjective| {
        local_train(&init, &spec, &data, idx, 3, obj, &hyper(0.1), 11, 2).unwrap()
    };
    let plain = run(&LocalObjective::Plain);
    let prox = run(&LocalObjective::new(
        ObjectiveKind::Prox { mu: 0.0 },
        &anchor,
        None,
    ));
    assert_eq!(plain.params, prox.params);
    let dyn_ = run(&LocalObjective::new(
        ObjectiveKind::Dyn { alpha: 1e-300 },
        &anchor,
        None,
    ));
    assert!(common::max_abs_diff(plain.params.values(), dyn_.params.values()) <= 1e-12);
}

#[test]
fn prox_step_from_the_anchor_is_a_plain_step() {
    let (spec, data, _) = toy(2);
    let anchor = spec.init(5);
    let rows: Vec<usize> = (0..8).collect();
    let h = TrainHyper {
        batch_size: 8,
        momentum: 0.0,
        ..hyper(0.2)
    };
    let plain = local_train(
        &anchor,
        &spec,
        &data,
        &rows,
        1,
        &LocalObjective::Plain,
        &h,
        3,
        0,
    )
    .unwrap();
    let prox_obj = LocalObjective::new(ObjectiveKind::Prox { mu: 5.0 }, &anchor, None);
    let prox = local_train(&anchor, &spec, &data, &rows, 1, &prox_obj, &h, 3, 0).unwrap();
    assert_eq!(plain.params, prox.params);
}

#[test]
fn prox_loss_decreases_on_a_linear_model() {
    let data = synth_dataset(3, 15, 4, 1.5, 8).unwrap();
    let spec = ModelSpec::mlp(4, vec![], 3).unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let batch = data.batch(&rows).unwrap();
    let anchor = spec.init(1);
    let mu = 0.5;
    let h = TrainHyper {
        lr: 0.05,
        momentum: 0.0,
        weight_decay: 0.0,
        batch_size: rows.len(),
    };
    let objective = LocalObjective::new(ObjectiveKind::Prox { mu }, &anchor, None);
    let value = |p: &ParamVector| {
        let d: f64 = p
            .values()
            .iter()
            .zip(anchor.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        common::cross_entropy(p, &spec, &batch) + 0.5 * mu * d
    };
    let mut theta = spec.init(2);
    let mut last = value(&theta);
    for step in 0..50 {
        theta = local_train(&theta, &spec, &data, &rows, 1, &objective, &h, step, 0)
            .unwrap()
            .params;
        let v = value(&theta);
        assert!(v <= last, "step {step}: {v} > {last}");
        last = v;
    }
}

#[test]
fn evaluation_bounds() {
    let data = synth_dataset(4, 25, 3, 1.0, 0).unwrap();
    let spec = ModelSpec::mlp(3, vec![5], 4).unwrap();
    assert_eq!(evaluate(&spec.zeros(), &spec, &data).unwrap(), 0.25);
    let acc = evaluate(&spec.init(3), &spec, &data).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn federated_runs_are_deterministic() {
    let (spec, data, partition) = toy(3);
    for (objective, aggregation) in [
        (ObjectiveKind::Plain, Aggregation::FedAvg),
        (ObjectiveKind::Prox { mu: 0.1 }, Aggregation::FedAvg),
        (ObjectiveKind::Dyn { alpha: 0.1 }, Aggregation::FedDyn),
    ] {
        let config = FederatedConfig {
            rounds: 6,
            fraction: 0.6,
            local_epochs: 2,
            objective,
            aggregation,
            hyper: hyper(0.05),
            seed: 21,
        };
        let a = run_federated(&config, &spec, &data, &partition, &data, &spec.init(0)).unwrap();
        let b = run_federated(&config, &spec, &data, &partition, &data, &spec.init(0)).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.to_csv(false), b.to_csv(false));
    }
}

#[test]
fn divergence_is_reported_not_propagated() {
    let (spec, data, partition) = toy(4);
    let config = FederatedConfig {
        rounds: 20,
        fraction: 1.0,
        local_epochs: 1,
        objective: ObjectiveKind::Plain,
        aggregation: Aggregation::FedAvg,
        hyper: TrainHyper {
            lr: 1e200,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 12,
        },
        seed: 1,
    };
    let h = run_federated(&config, &spec, &data, &partition, &data, &spec.init(0)).unwrap();
    assert!(h.diverged());
    assert!(h.records.len() < 20);
}

fn groups() -> Vec<Superclient> {
    [vec![0, 1], vec![2, 3], vec![4]]
        .into_iter()
        .enumerate()
        .map(|(id, clients)| Superclient {
            id,
            num_samples: 12 * clients.len(),
            clients,
            undersized: false,
        })
        .collect()
}

/// Three rounds of FedSeqInter with N_S = 3 and two slots, traced by hand: slots are
/// averaged after round 0 only, then carried through rounds 1 and 2.
#[test]
fn inter_slots_follow_the_hand_trace() {
    let (spec, data, partition) = toy(5);
    let sc = groups();
    let config = FedSeqConfig {
        rounds: 3,
        fraction: 0.6,
        local_epochs: 1,
        superclient_epochs: 1,
        objective: ObjectiveKind::Plain,
        aggregation: Aggregation::FedAvg,
        hyper: hyper(0.05),
        seed: 13,
    };
    let theta0 = spec.init(9);
    let history = fedseqinter_run(&config, &spec, &data, &partition, &sc, &data, &theta0).unwrap();
    assert_eq!(
        history
            .records
            .iter()
            .map(|r| r.aggregated)
            .collect::<Vec<_>>(),
        vec![true, false, false]
    );

    let chain = |theta: &ParamVector, z: usize, t: usize| {
        sequential_train_superclient(theta, &sc[z], &spec, &data, &partition, &config, t, &[])
            .unwrap()
            .update
            .params
    };
    let s0 = sample_participants(13, 0, 3, 0.6);
    assert_eq!(s0.len(), 2);
    let after0: Vec<ParamVector> = s0.iter().map(|&z| chain(&theta0, z, 0)).collect();
    let w0: Vec<usize> = s0.iter().map(|&z| sc[z].num_samples).collect();
    let theta1 = fedavg_aggregate(&[
        update(after0[0].clone(), w0[0], 0),
        update(after0[1].clone(), w0[1], 1),
    ])
    .unwrap();

    let mut slots = [theta1.clone(), theta1];
    let mut weights = [0usize; 2];
    for t in 1..3 {
        for (i, &z) in sample_participants(13, t, 3, 0.6).iter().enumerate() {
            slots[i] = chain(&slots[i], z, t);
            weights[i] += sc[z].num_samples;
        }
    }
    let expected = common::fedavg_oracle(
        &[slots[0].values().to_vec(), slots[1].values().to_vec()],
        &weights,
    );
    assert!(common::max_abs_diff(history.final_params.values(), &expected) < 1e-12);
}
