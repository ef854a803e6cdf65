//! Acceptance suite. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; the process fails if any criterion does.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use itertools::Itertools;
use mudscope_core::tree::{PruneRule, LEAF_LEVEL};
use mudscope_core::{
    format_correct, merge_acls, parse_mud_file, serialize_profile, AceTree, ConnectivityGraph, DeviceProfile,
    Direction, EndpointKind, ProtocolStack,
};
use oracle::{random_specs, semantics, semantics_of_specs, universe, Spec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

const RANDOM_CASES: usize = 1000;
const BENCH_COPIES: &str = "512";
const BENCH_WALL_LIMIT: Duration = Duration::from_secs(526);
const BENCH_MEMORY_LIMIT_MB: f64 = 1754.0;

const TOPOLOGY_SET: [&str; 8] = [
    "bulb.json",
    "switch.json",
    "hub.json",
    "camera.json",
    "thermostat.json",
    "speaker.json",
    "plug.json",
    "cooker.json",
];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mud")
}

fn load(name: &str) -> DeviceProfile {
    let text = fs::read_to_string(fixture_dir().join(name)).unwrap();
    parse_mud_file(&text).unwrap_or_else(|r| panic!("{name}: {r}")).0
}

fn st(s: &str) -> ProtocolStack {
    ProtocolStack::parse(s, Direction::FromDevice).unwrap()
}

fn texts(stacks: &[ProtocolStack]) -> BTreeSet<String> {
    stacks.iter().map(|s| s.to_string()).collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn eight_stacks() -> Vec<ProtocolStack> {
    [
        "[IPv4,TCP,80,43]",
        "[IPv4,TCP,any,any]",
        "[IPv4,UDP,800,520]",
        "[IPv4,any,800,520]",
        "[IPv6,UDP,90,120]",
        "[any,TCP,400,480]",
        "[any,UDP,90,120]",
        "[any,any,400,480]",
    ]
    .iter()
    .map(|s| st(s))
    .collect()
}

fn two_device_merge() -> Outcome {
    let dev1 = [st("[IPv4,UDP,any,any]"), st("[any,TCP,5000,any]")];
    let dev2: Vec<ProtocolStack> =
        ["[any,any,5000,400]", "[IPv6,any,any,8080]"].iter().map(|s| st(s).with_direction(Direction::ToDevice)).collect();
    let want = texts(&[st("[IPv4,UDP,5000,400]"), st("[IPv6,TCP,5000,8080]"), st("[any,TCP,5000,400]")]);

    let started = Instant::now();
    let merged = merge_acls(&dev1, &dev2);
    let elapsed = started.elapsed();
    ensure(merged.len() == 3 && texts(&merged) == want, || format!("got {:?}", texts(&merged)))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;

    // Same flows when the two devices come from MUD files.
    let (a, b) = (load("pair-dev1.json"), load("pair-dev2.json"));
    let out: Vec<ProtocolStack> = a.aces(Direction::FromDevice).iter().map(|a| a.stack.clone()).collect();
    let inb: Vec<ProtocolStack> = b.aces(Direction::ToDevice).iter().map(|a| a.stack.clone()).collect();
    let from_files = merge_acls(&out, &inb);
    ensure(texts(&from_files) == want, || format!("fixture merge gave {:?}", texts(&from_files)))?;
    Ok(format!("3 stacks in {:.3} ms", elapsed.as_secs_f64() * 1e3))
}

fn eight_stack_prune() -> Outcome {
    let started = Instant::now();
    let mut tree = AceTree::build(&eight_stacks());
    tree.prune();
    let got = tree.traverse();
    let elapsed = started.elapsed();
    let want: Vec<ProtocolStack> =
        ["[IPv4,TCP,any,any]", "[IPv4,any,800,520]", "[any,UDP,90,120]", "[any,any,400,480]"].iter().map(|s| st(s)).collect();
    ensure(texts(&got) == texts(&want) && got.len() == 4, || format!("got {:?}", texts(&got)))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("8 -> 4 stacks in {:.3} ms", elapsed.as_secs_f64() * 1e3))
}

fn prune_examples() -> Outcome {
    let tree = AceTree::build(&eight_stacks());
    ensure(tree.leaves().len() == 8, || "tree should start with 8 leaves".into())?;
    ensure(tree.leaves().iter().all(|&l| tree.level(l) == LEAF_LEVEL), || "leaves at wrong depth".into())?;
    let mut pruned = tree.clone();
    let events = pruned.prune();
    let expect = [
        ("[IPv4,TCP,80,43]", "[IPv4,TCP,any,any]", PruneRule::Sibling),
        ("[IPv6,UDP,90,120]", "[any,UDP,90,120]", PruneRule::Cousin),
        ("[IPv4,UDP,800,520]", "[IPv4,any,800,520]", PruneRule::Cousin),
    ];
    for (leaf, cover, rule) in expect {
        let leaf = st(leaf);
        let event = events
            .iter()
            .find(|e| e.pruned.same_layers(&leaf))
            .ok_or_else(|| format!("{leaf} was not pruned"))?;
        ensure(event.covered_by.same_layers(&st(cover)) && event.rule == rule, || {
            format!("{leaf} pruned by {} ({:?}), expected {cover} ({rule:?})", event.covered_by, event.rule)
        })?;
        ensure(pruned.find(&leaf).is_none(), || format!("{leaf} still present after pruning"))?;
    }
    Ok("sibling, cousin and parent-level cover each confirmed".into())
}

fn stacks(specs: &[Spec], d: Direction) -> Vec<ProtocolStack> {
    specs.iter().map(|s| s.stack(d)).collect()
}

fn merge_oracle() -> Outcome {
    let u = universe();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d75_6400);
    let mut failures = Vec::new();
    for case in 0..RANDOM_CASES {
        let a = random_specs(&mut rng, 4, false);
        let b = random_specs(&mut rng, 4, false);
        let merged = merge_acls(&stacks(&a, Direction::FromDevice), &stacks(&b, Direction::ToDevice));
        let want: BTreeSet<_> = semantics_of_specs(&a, &u).intersection(&semantics_of_specs(&b, &u)).copied().collect();
        if semantics(&merged, &u) != want {
            failures.push(case);
        }
    }
    ensure(failures.is_empty(), || format!("{} failing cases, first #{}", failures.len(), failures[0]))?;
    Ok(format!("{RANDOM_CASES} cases, 0 failures"))
}

fn prune_oracle() -> Outcome {
    let u = universe();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d75_6401);
    let mut failures: Vec<String> = Vec::new();
    for case in 0..RANDOM_CASES {
        let specs = random_specs(&mut rng, 8, false);
        let tree = AceTree::build(&stacks(&specs, Direction::FromDevice));
        let before = semantics(&tree.traverse(), &u);
        let mut pruned = tree.clone();
        pruned.prune();
        if semantics(&pruned.traverse(), &u) != before {
            failures.push(format!("#{case}: semantics changed"));
            continue;
        }
        let mut again = pruned.clone();
        if !again.prune().is_empty() || again != pruned {
            failures.push(format!("#{case}: second prune changed the tree"));
            continue;
        }
        let leaves = pruned.leaves();
        for (&a, &b) in leaves.iter().tuple_combinations() {
            if pruned.parent(a) != pruned.parent(b) {
                continue;
            }
            let (sa, sb) = (semantics(&[pruned.leaf_stack(a)], &u), semantics(&[pruned.leaf_stack(b)], &u));
            if (sa.is_subset(&sb) || sb.is_subset(&sa)) && sa != sb {
                failures.push(format!("#{case}: sibling leaves are nested"));
            }
        }
    }
    ensure(failures.is_empty(), || format!("{} failures, first {}", failures.len(), failures[0]))?;
    Ok(format!("{RANDOM_CASES} trees, 0 failures"))
}

fn build(profiles: &[DeviceProfile]) -> ConnectivityGraph {
    let mut g = ConnectivityGraph::default();
    for p in profiles {
        g.add_profile(p.clone()).unwrap();
    }
    g
}

fn topology_determinism() -> Outcome {
    let profiles: Vec<DeviceProfile> = TOPOLOGY_SET.iter().map(|n| load(n)).collect();
    let kinds: BTreeSet<EndpointKind> = profiles.iter().flat_map(|p| p.all_aces()).map(|a| a.endpoint.kind()).collect();
    ensure(kinds.len() == EndpointKind::ALL.len(), || format!("fixture set covers only {kinds:?}"))?;

    let reference = build(&profiles).to_json();
    let orders: Vec<Vec<usize>> = (0..profiles.len()).permutations(profiles.len()).collect();
    let mismatches = orders
        .par_iter()
        .filter(|order| {
            let ordered: Vec<DeviceProfile> = order.iter().map(|&i| profiles[i].clone()).collect();
            build(&ordered).to_json() != reference
        })
        .count();
    ensure(mismatches == 0, || format!("{mismatches} of {} load orders differ", orders.len()))?;

    for (i, profile) in profiles.iter().enumerate() {
        let rest: Vec<DeviceProfile> =
            profiles.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| p.clone()).collect();
        let mut g = build(&rest);
        let before = g.to_json();
        g.add_profile(profile.clone()).unwrap();
        g.remove_profile(&profile.id).unwrap();
        ensure(g.to_json() == before, || format!("removing {} did not restore the export", profile.id))?;
    }
    Ok(format!("{} load orders identical, 8 add/remove cycles restore the export", orders.len()))
}

fn parser_round_trip() -> Outcome {
    let mut files: Vec<(String, String)> = fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    files.sort();
    ensure(files.len() >= 12, || format!("only {} fixtures", files.len()))?;

    let mut malformed = 0;
    let mut kinds = BTreeSet::new();
    for (name, text) in &files {
        match parse_mud_file(text) {
            Err(_) => malformed += 1,
            Ok((p1, _)) => {
                kinds.extend(p1.all_aces().map(|a| a.endpoint.kind()));
                let s1 = serialize_profile(&p1);
                let (p2, _) = parse_mud_file(&s1).map_err(|r| format!("{name}: reparse failed: {r}"))?;
                ensure(p1 == p2, || format!("{name}: parse/serialize/parse changed the profile"))?;
                ensure(serialize_profile(&p2) == s1, || format!("{name}: serialization is not stable"))?;
            }
        }
        if let Ok((once, _)) = format_correct(text) {
            let (twice, _) = format_correct(&once).map_err(|r| format!("{name}: {r}"))?;
            ensure(once == twice, || format!("{name}: format correction is not idempotent"))?;
        }
    }
    ensure(malformed >= 4, || format!("only {malformed} malformed fixtures"))?;
    ensure(kinds.len() == EndpointKind::ALL.len(), || format!("corpus covers only {kinds:?}"))?;
    Ok(format!("{} files ({malformed} malformed)", files.len()))
}

fn bench_scale() -> Outcome {
    let heavy = fixture_dir().join("heavy.json");
    let profile = load("heavy.json");
    let kinds: BTreeSet<EndpointKind> = profile.all_aces().map(|a| a.endpoint.kind()).collect();
    ensure(
        kinds.len() == 5 && !kinds.contains(&EndpointKind::MyController) && !kinds.contains(&EndpointKind::Model),
        || format!("heavy profile uses {kinds:?}"),
    )?;

    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_mudscope"))
        .args(["bench", "--copies", BENCH_COPIES, "--file"])
        .arg(&heavy)
        .output()
        .map_err(|e| e.to_string())?;
    let wall = started.elapsed();
    ensure(out.status.success(), || format!("bench exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)))?;
    let report: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let phases = report["phases"].as_array().ok_or("no phases reported")?;
    let names: Vec<&str> = phases.iter().filter_map(|p| p["name"].as_str()).collect();
    ensure(names == ["parse", "resolve", "merge+prune", "export"], || format!("phases {names:?}"))?;
    ensure(phases.iter().all(|p| p["seconds"].is_f64()), || "phase without timing".into())?;
    let peak = report["peakMemoryMb"].as_f64().ok_or("no peak memory reported")?;
    ensure(wall < BENCH_WALL_LIMIT, || format!("took {:.1} s", wall.as_secs_f64()))?;
    ensure(peak < BENCH_MEMORY_LIMIT_MB, || format!("peak memory {peak:.0} MB"))?;
    let timings = phases
        .iter()
        .map(|p| format!("{} {:.2}s", p["name"].as_str().unwrap(), p["seconds"].as_f64().unwrap()))
        .join(", ");
    Ok(format!(
        "{BENCH_COPIES} copies, {} links, {:.1} s wall, {peak:.0} MB peak ({timings})",
        report["links"],
        wall.as_secs_f64()
    ))
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panicked".into()
    }
}

fn main() -> ExitCode {
    // libtest flags such as --list or --nocapture are accepted and ignored.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 8] = [
        ("two-device merge example", two_device_merge),
        ("eight-stack prune example", eight_stack_prune),
        ("individual prune rules", prune_examples),
        ("merge against brute-force oracle", merge_oracle),
        ("prune semantics, idempotence, sibling antichain", prune_oracle),
        ("topology load-order determinism and removal", topology_determinism),
        ("parser round-trip over the fixture corpus", parser_round_trip),
        ("bench scalability", bench_scale),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| Err(panic_message(p)));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    let _ = panic::take_hook();
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
