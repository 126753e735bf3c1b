//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use patchnet::actors::Mode;
use patchnet::contracts::{delivery_key, pod_message, Call, ContractError, DscParams};
use patchnet::crypto::{hash, KeyPair, PublicKey};
use patchnet::harness::lemmas::{
    ALWAYS_PAID_IF_UPDATE_READY, MAX_ONE_PAYMENT_FOR_ONE_IOT, PAYMENT_ONLY_IF_GENERATE_PROOF,
};
use patchnet::harness::scenarios::{self, Attack};
use patchnet::harness::trace::EventKind;
use patchnet::harness::{run, RunReport, ScenarioConfig};
use patchnet::ledger::{Address, Ledger, LedgerEvent, Transaction, TxReceipt};
use patchnet::network::adversary::ADVERSARY;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn run_ok(cfg: &ScenarioConfig) -> Result<RunReport, String> {
    run(cfg).map_err(|e| e.to_string())
}

fn count(r: &RunReport, pred: impl Fn(&EventKind) -> bool) -> usize {
    r.count(pred)
}

/// Supply equals genesis after every block.
fn conserved(r: &RunReport) -> bool {
    r.conservation_breaches.is_empty() && r.supply.iter().all(|s| *s == r.ledger.genesis_supply())
}

fn lemma(r: &RunReport, name: &str) -> bool {
    r.lemmas.iter().find(|l| l.lemma == name).is_some_and(|l| l.holds)
}

/// Runs executed for criteria 1-5, kept for the conservation check.
#[derive(Default)]
struct Ledgerbook {
    runs: Vec<(String, bool)>,
}

impl Ledgerbook {
    fn note(&mut self, label: impl Into<String>, r: &RunReport) {
        self.runs.push((label.into(), conserved(r)));
    }
}

fn happy_path(book: &mut Ledgerbook) -> Outcome {
    let cfg = scenarios::happy_path(1);
    let started = Instant::now();
    let r = run_ok(&cfg)?;
    let elapsed = started.elapsed();
    book.note("happy", &r);
    let per_device = cfg.reward_distributor + cfg.reward_hub;
    let devices = cfg.devices as u64;

    let installs = count(&r, |e| matches!(e, EventKind::UpdateInstalled { .. }));
    let to_d = count(&r, |e| matches!(e, EventKind::PaymentToD { .. }));
    let to_h = count(&r, |e| matches!(e, EventKind::PaymentToH { .. }));
    ensure!(installs == 3 && r.installed() == 3, "{installs} installs");
    ensure!(to_d == 3 && to_h == 3, "{to_d} PaymentToD, {to_h} PaymentToH");

    let dsc = r.release.ok_or("no release")?;
    let paid_out: u64 = r
        .ledger
        .receipts()
        .iter()
        .filter_map(|t| t.outcome.as_ref().ok())
        .flatten()
        .filter_map(|e| match e {
            LedgerEvent::Paid { from, amount, .. } if *from == dsc => Some(*amount),
            _ => None,
        })
        .sum();
    let deposit = cfg.deposit();
    ensure!(paid_out == devices * per_device, "deposit paid out {paid_out}");
    ensure!(
        r.ledger.balance(&dsc) == deposit - devices * per_device,
        "deposit left {}",
        r.ledger.balance(&dsc)
    );
    ensure!(elapsed.as_millis() < 1000, "took {elapsed:?}");
    ensure!(r.exit_code(true) == 0, "exit {}", r.exit_code(true));
    Ok(format!(
        "3 installs, 3+3 payments, deposit -{} in {:.0?}",
        devices * per_device,
        elapsed
    ))
}

struct RandomRun {
    seed: u64,
    leaks: usize,
    underivable: usize,
    conserved: bool,
}

struct Randomized {
    reports: Vec<RandomRun>,
}

fn lemma_suite(runs: u64) -> Result<(String, Randomized), String> {
    let started = Instant::now();
    let mut bad = Vec::new();
    let mut reports = Vec::new();
    let mut adversary_actions = 0;
    for seed in 0..runs {
        let cfg = scenarios::randomized(seed);
        ensure!(cfg.mode == Mode::Standard, "seed {seed} not in standard mode");
        let r = run_ok(&cfg)?;
        for name in [PAYMENT_ONLY_IF_GENERATE_PROOF, ALWAYS_PAID_IF_UPDATE_READY, MAX_ONE_PAYMENT_FOR_ONE_IOT] {
            if !lemma(&r, name) {
                bad.push(format!("{name}@{seed}"));
            }
        }
        adversary_actions += count(&r, |e| matches!(e, EventKind::AdversaryAction { .. }));
        reports.push(RandomRun {
            seed,
            leaks: r.confinement_breaches.len(),
            underivable: r.underivable_emissions,
            conserved: conserved(&r),
        });
    }
    let elapsed = started.elapsed();
    ensure!(bad.is_empty(), "violations: {}", bad.join(", "));
    ensure!(adversary_actions > 0, "adversary never acted");
    ensure!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    Ok((
        format!("{runs} runs, {adversary_actions} adversary actions, 0 violations in {elapsed:.1?}"),
        Randomized { reports },
    ))
}

fn leiba(book: &mut Ledgerbook, seeds: u64) -> Outcome {
    for seed in 0..seeds {
        let legacy = run_ok(&scenarios::leiba(seed, Mode::LegacyLeiba))?;
        book.note(format!("leiba-legacy-{seed}"), &legacy);
        let adv = legacy.account(ADVERSARY);
        let adv_paid = count(&legacy, |e| matches!(e, EventKind::PaymentToD { distributor, .. } if *distributor == adv));
        let adv_proofs = count(&legacy, |e| matches!(e, EventKind::GenProof { distributor, .. } if *distributor == adv));
        let devices = legacy.devices.len();
        ensure!(adv_paid == devices, "seed {seed}: legacy adversary paid {adv_paid} times");
        ensure!(adv_proofs == 0, "seed {seed}: adversary generated proofs");
        ensure!(legacy.installed() == 0, "seed {seed}: legacy installs {}", legacy.installed());
        ensure!(
            !lemma(&legacy, PAYMENT_ONLY_IF_GENERATE_PROOF),
            "seed {seed}: legacy lemma unexpectedly holds"
        );
        ensure!(legacy.exit_code(true) == 3, "seed {seed}: legacy exit {}", legacy.exit_code(true));

        let standard = run_ok(&scenarios::leiba(seed, Mode::Standard))?;
        book.note(format!("leiba-standard-{seed}"), &standard);
        let adv = standard.account(ADVERSARY);
        let adv_paid = count(&standard, |e| match e {
            EventKind::PaymentToD { distributor, .. } => *distributor == adv,
            EventKind::PaymentToH { hub, .. } => *hub == adv,
            EventKind::ExchangePaid { payee, .. } => *payee == adv,
            _ => false,
        });
        ensure!(adv_paid == 0, "seed {seed}: standard adversary paid {adv_paid} times");
        ensure!(
            standard.balance(ADVERSARY) <= standard.genesis_balance(ADVERSARY),
            "seed {seed}: adversary balance grew"
        );
        ensure!(standard.exit_code(true) == 0, "seed {seed}: standard exit {}", standard.exit_code(true));
    }
    Ok(format!("{seeds} seeds: legacy forged payout every time, standard zero payouts"))
}

fn attack_suite(book: &mut Ledgerbook, seeds: u64) -> Outcome {
    let mut passed = 0;
    for attack in Attack::SUITE {
        let mut failures = Vec::new();
        for seed in 0..seeds {
            let cfg = attack.configure(&scenarios::happy_path(seed));
            let r = run_ok(&cfg)?;
            book.note(format!("{attack}-{seed}"), &r);
            let v = attack.evaluate(&r);
            if !v.defeated() {
                failures.push(format!("seed {seed}: {}", v.failed_checks().collect::<Vec<_>>().join("; ")));
            }
        }
        if failures.is_empty() {
            passed += 1;
        } else {
            return Err(format!("{attack} failed: {}", failures.join(" | ")));
        }
    }
    ensure!(passed == 5, "{passed}/5");
    Ok(format!("5/5 attacks defeated over {seeds} seeds each"))
}

fn dde(book: &mut Ledgerbook) -> Outcome {
    let cfg = scenarios::dde(3);
    let r = run_ok(&cfg)?;
    book.note("dde", &r);
    let fhd = r.account("dist0");
    let shd = r.account("shd0");
    let seeded = count(&r, |e| matches!(e, EventKind::SeedServed { to } if to == "shd0"));
    let refused = count(&r, |e| matches!(e, EventKind::SeedRefused { to } if to == "shd0"));
    ensure!(seeded == 0 && refused > 0, "shd0 seeded {seeded}, refused {refused}");
    let via_dde = count(&r, |e| matches!(e, EventKind::PackageAcquired { distributor, via } if *distributor == shd && *via == "exchange"));
    ensure!(via_dde == 1, "shd0 acquired by exchange {via_dde} times");

    let gain = r.ledger.balance(&fhd) as i128 - r.genesis_balance("dist0") as i128;
    ensure!(gain == cfg.dde_offer as i128, "FHD gained {gain}, offer {}", cfg.dde_offer);

    let (_, esc) = r
        .ledger
        .escs()
        .find(|(_, e)| e.payee == fhd)
        .ok_or("no escrow for the FHD")?;
    ensure!(esc.claimed, "escrow not claimed");
    let key = r.ledger.published_key(&esc.s).ok_or("escrow key not published")?;
    ensure!(hash(key.as_bytes()) == esc.s, "hash(r) != s");

    let shd_paid: Vec<u64> = r
        .trace
        .events()
        .iter()
        .filter_map(|e| match &e.event {
            EventKind::PaymentToD { distributor, amount, .. } if *distributor == shd => Some(*amount),
            _ => None,
        })
        .collect();
    ensure!(shd_paid == vec![cfg.reward_distributor], "SHD payments {shd_paid:?}");
    ensure!(r.installed() == 1, "device not updated");
    ensure!(r.exit_code(true) == 0, "exit {}", r.exit_code(true));
    Ok(format!("FHD +{}, hash(r) = s, SHD paid {}", cfg.dde_offer, cfg.reward_distributor))
}

/// A bare chain with one manufacturer, one distributor and `n` devices.
struct Chain {
    rng: ChaCha20Rng,
    ledger: Ledger,
    mfr: Address,
    dist: Address,
    devices: Vec<KeyPair>,
    ssc: Address,
    update: patchnet::crypto::Digest,
}

impl Chain {
    fn new(n: usize, reset_period: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mfr = Address::from(KeyPair::generate(&mut rng).public());
        let dist = Address::from(KeyPair::generate(&mut rng).public());
        let devices: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate(&mut rng)).collect();
        let mut ledger = Ledger::genesis([(mfr, 10_000), (dist, 10)], 2);
        ledger
            .submit_tx(Transaction {
                sender: mfr,
                target: Address::CREATE,
                value: 0,
                call: Call::DeploySsc { reset_period },
            })
            .unwrap();
        ledger.advance_block();
        let ssc = ledger.ssc_of(&mfr).unwrap();
        Chain {
            rng,
            ledger,
            mfr,
            dist,
            devices,
            ssc,
            update: hash(b"firmware"),
        }
    }

    fn params(&self, expiry: u64, targets: &[PublicKey]) -> DscParams {
        DscParams {
            expiry,
            update_hash: self.update,
            package_hash: hash(b"package"),
            vk_delivery_hash: hash(b"vk_d"),
            vk_exchange_hash: hash(b"vk_e"),
            pk_exchange_hash: hash(b"pk_e"),
            targets: targets.to_vec(),
            reward_distributor: 5,
            reward_hub: 2,
        }
    }

    /// One transaction in its own block.
    fn exec(&mut self, sender: Address, target: Address, value: u64, call: Call) -> TxReceipt {
        self.ledger
            .submit_tx(Transaction { sender, target, value, call })
            .unwrap();
        let mut receipts = self.ledger.advance_block();
        assert_eq!(receipts.len(), 1);
        receipts.remove(0)
    }

    fn release(&mut self, expiry: u64, deposit: u64) -> TxReceipt {
        let targets: Vec<PublicKey> = self.devices.iter().map(|k| k.public()).collect();
        let p = self.params(expiry, &targets);
        let (mfr, ssc) = (self.mfr, self.ssc);
        self.exec(mfr, ssc, deposit, Call::CreateDsc(p))
    }

    fn pod(&mut self, device: usize) -> Call {
        let mut t = [0u8; 32];
        self.rng.fill_bytes(&mut t);
        let pk = self.devices[device].public();
        let r = delivery_key(&t, &pk, &self.dist);
        let s = hash(r.as_bytes());
        let pod = self.devices[device].sign(&pod_message(&self.update, &s));
        Call::SubmitPod { device: pk, t, r, s, pod }
    }

    fn deliver(&mut self, dsc: Address, device: usize) -> TxReceipt {
        let call = self.pod(device);
        let dist = self.dist;
        self.exec(dist, dsc, 0, call)
    }

    fn idle_until(&mut self, height: u64) {
        while self.ledger.height() < height {
            assert!(self.ledger.advance_block().is_empty());
        }
    }
}

fn dsc_of(r: &TxReceipt) -> Option<Address> {
    r.outcome.as_ref().ok()?.iter().find_map(|e| match e {
        LedgerEvent::ContractDeployed { address, .. } => Some(*address),
        _ => None,
    })
}

fn score_of(r: &TxReceipt) -> Option<u64> {
    r.outcome.as_ref().ok()?.iter().find_map(|e| match e {
        LedgerEvent::ScoreUpdated { score, .. } => Some(*score),
        _ => None,
    })
}

fn scores() -> Outcome {
    let period = 5;
    let mut c = Chain::new(3, period);
    let release = c.release(1000, 21);
    let dsc = dsc_of(&release).ok_or("release failed")?;
    let dist = c.dist;
    let ssc = c.ssc;

    let first = c.deliver(dsc, 0);
    let second = c.deliver(dsc, 1);
    let last = second.height;
    // boundary: one block before the period elapses the stored score stands
    c.idle_until(last + period - 1);
    let before_reset = c.ledger.score(&ssc, &dist);
    c.idle_until(last + period);
    let after_silence = c.ledger.score(&ssc, &dist);
    let third = c.deliver(dsc, 2);

    let observed = [score_of(&first), score_of(&second), score_of(&third)];
    ensure!(observed == [Some(1), Some(2), Some(1)], "observed {observed:?}");
    ensure!(before_reset == 2, "boundary read {before_reset}");
    ensure!(after_silence == 0, "read after silent period {after_silence}");
    Ok(format!("scores 1, 2, 1; boundary read 2; silent read 0 (period {period})"))
}

fn guards() -> Outcome {
    // deposit: the bound is |targets| * (a_d + a_h), recomputed here
    let mut c = Chain::new(3, 100);
    let bound = 3 * (5 + 2);
    let short = c.release(50, bound - 1);
    ensure!(
        short.outcome == Err(ContractError::InsufficientDeposit { required: bound, attached: bound - 1 }),
        "bound-1 gave {:?}",
        short.outcome
    );
    let exact = c.release(50, bound);
    ensure!(exact.ok(), "bound gave {:?}", exact.outcome);

    // expiry: accepted at created+e-1, rejected at created+e
    let e = 6;
    let mut c = Chain::new(2, 100);
    let rel = c.release(e, 14);
    let dsc = dsc_of(&rel).ok_or("release failed")?;
    let created = rel.height;
    c.idle_until(created + e - 2);
    let last_ok = c.deliver(dsc, 0);
    ensure!(last_ok.height == created + e - 1, "ran at {}", last_ok.height);
    ensure!(last_ok.ok(), "created+e-1 gave {:?}", last_ok.outcome);
    let late = c.deliver(dsc, 1);
    ensure!(late.height == created + e, "ran at {}", late.height);
    ensure!(late.outcome == Err(ContractError::Expired), "created+e gave {:?}", late.outcome);

    // double submission for one device
    let mut c = Chain::new(1, 100);
    let dsc = dsc_of(&c.release(50, 7)).ok_or("release failed")?;
    let once = c.deliver(dsc, 0);
    let twice = c.deliver(dsc, 0);
    ensure!(once.ok(), "first submission {:?}", once.outcome);
    ensure!(
        twice.outcome == Err(ContractError::UnknownOrServedDevice),
        "second submission {:?}",
        twice.outcome
    );
    Ok(format!("deposit {bound} ok / {} rejected; expiry created+{} ok / created+{e} rejected; resubmission rejected", bound - 1, e - 1))
}

fn determinism(pairs: u64) -> Outcome {
    for seed in 0..pairs {
        let cfg = scenarios::randomized(1000 + seed);
        let a = run_ok(&cfg)?.trace.to_jsonl();
        let b = run_ok(&cfg)?.trace.to_jsonl();
        ensure!(a == b, "seed {} traces differ", 1000 + seed);
        ensure!(!a.is_empty(), "empty trace");
    }
    Ok(format!("{pairs} seed pairs byte-identical"))
}

fn confinement(runs: &Randomized) -> Outcome {
    let leaks: Vec<String> = runs
        .reports
        .iter()
        .filter(|r| r.leaks > 0 || r.underivable > 0)
        .map(|r| format!("seed {}: {} leaks, {} underivable", r.seed, r.leaks, r.underivable))
        .collect();
    ensure!(leaks.is_empty(), "{}", leaks.join("; "));
    Ok(format!("{} runs scanned, no early U or r", runs.reports.len()))
}

fn conservation(book: &Ledgerbook, randomized: &Randomized) -> Outcome {
    let mut broken: Vec<String> = book.runs.iter().filter(|(_, ok)| !ok).map(|(l, _)| l.clone()).collect();
    broken.extend(randomized.reports.iter().filter(|r| !r.conserved).map(|r| format!("random-{}", r.seed)));
    ensure!(broken.is_empty(), "broken in {}", broken.join(", "));
    Ok(format!(
        "{} runs, supply equal to genesis after every block",
        book.runs.len() + randomized.reports.len()
    ))
}

fn main() {
    let mut book = Ledgerbook::default();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();

    results.push((1, "happy path", happy_path(&mut book)));

    let (c2, randomized) = match lemma_suite(500) {
        Ok((line, r)) => (Ok(line), Some(r)),
        Err(e) => (Err(e), None),
    };
    results.push((2, "lemma suite", c2));
    results.push((3, "identity-signature forgery", leiba(&mut book, 20)));
    results.push((4, "attack suite", attack_suite(&mut book, 3)));
    results.push((5, "distributor exchange", dde(&mut book)));
    results.push((6, "score semantics", scores()));
    results.push((7, "contract guards", guards()));
    results.push((8, "determinism", determinism(20)));
    let (c9, c10) = match &randomized {
        Some(r) => (confinement(r), conservation(&book, r)),
        None => {
            let why = "randomized suite did not complete".to_string();
            (Err(why.clone()), Err(why))
        }
    };
    results.push((9, "witness confinement", c9));
    results.push((10, "currency conservation", c10));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name}: {why}");
            }
        }
    }
    println!("{}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

