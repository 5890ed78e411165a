//! Acceptance criteria, one line each. Exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use pbn_core::identity::{make_device_id, DeviceId};
use pbn_core::mom::ONLY_SCRIBE_CAN_EDIT;
use pbn_core::session::Role;
use pbn_core::sim::{EventKind, SimConfig, UserAction, World};
use pbn_core::sweep::{run_batch, CaseOutcome, GraphCase, PathOutcome, SweepOptions};
use pbn_core::trace::{decode_list, decode_table, parse_trace, TraceLine};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 9] = [
        ("star tables", star_tables),
        ("random connected graphs converge", connected_graphs),
        ("trees deliver on shortest paths", tree_delivery),
        ("session scenarios pass", session_scenarios),
        ("five device sharing", five_device),
        ("ownership rules in every 3-node session", permissions),
        ("traces are byte-identical", determinism),
        ("count to infinity", count_to_infinity),
        ("broadcasts follow key-set changes", broadcast_audit),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (verdict, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {verdict} {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn pbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbn")).args(args).output().expect("pbn runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn social(canonical: &str) -> &str {
    canonical.split_once('#').map_or(canonical, |(s, _)| s)
}

/// Runs a bundled scenario and returns its exit code and summary.
fn run_with_summary(name: &str, extra: &[&str]) -> Result<(i32, serde_json::Value), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = dir.path().join("summary.json");
    let scenario = scenario(name);
    let mut args = vec!["run", path(&scenario), "--summary", path(&summary)];
    args.extend_from_slice(extra);
    let o = pbn(&args);
    let code = o.status.code().ok_or("killed by a signal")?;
    let text = fs::read_to_string(&summary).map_err(|e| format!("{name}: no summary ({e})"))?;
    Ok((code, serde_json::from_str(&text).map_err(|e| e.to_string())?))
}

fn bfs(n: usize, edges: &[(usize, usize)], s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; n];
    dist[s] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for &(a, b) in edges {
            let v = if a == u {
                b
            } else if b == u {
                a
            } else {
                continue;
            };
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn star_tables() -> Check {
    let started = Instant::now();
    let (code, s) = run_with_summary("star", &[])?;
    let elapsed = started.elapsed();
    ensure(code == 0, || format!("exit {code}"))?;
    let want: [(&str, &[(&str, &str)]); 4] = [
        ("A", &[("B", "B"), ("C", "B"), ("D", "B")]),
        ("B", &[("A", "A"), ("C", "C"), ("D", "D")]),
        ("C", &[("A", "B"), ("B", "B"), ("D", "B")]),
        ("D", &[("A", "B"), ("B", "B"), ("C", "B")]),
    ];
    for (node, entries) in want {
        let got: BTreeMap<&str, &str> = s["nodes"][node]["table"]
            .as_object()
            .ok_or("summary has no table")?
            .iter()
            .map(|(k, v)| (social(k), social(v.as_str().unwrap_or(""))))
            .collect();
        let want: BTreeMap<&str, &str> = entries.iter().copied().collect();
        ensure(got == want, || format!("{node}: {got:?}, expected {want:?}"))?;
    }
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("4 tables match in {} ms", elapsed.as_millis()))
}

fn sweep(cases: &[GraphCase]) -> Vec<CaseOutcome> {
    run_batch(cases, &SweepOptions::default())
}

fn connected_cases() -> Vec<GraphCase> {
    (0..100).map(|seed| GraphCase::connected(seed, 8)).collect()
}

fn connected_graphs() -> Check {
    let started = Instant::now();
    let outcomes = sweep(&connected_cases());
    let elapsed = started.elapsed();
    for o in &outcomes {
        let c = &o.case;
        ensure(o.quiescent(), || format!("seed {}: not quiescent", c.seed))?;
        ensure(o.violations.is_empty(), || format!("seed {}: {:?}", c.seed, o.violations))?;
        for v in 0..c.nodes {
            let dist = bfs(c.nodes, &c.edges, v);
            let want: BTreeSet<usize> = (0..c.nodes).filter(|&u| u != v && dist[u].is_some()).collect();
            let got: BTreeSet<usize> = o.tables[v].keys().copied().collect();
            ensure(got == want, || format!("seed {} node {v}: {got:?}, expected {want:?}", c.seed))?;
            for u in want {
                ensure(matches!(o.paths[v][u], Some(PathOutcome::Delivered { .. })), || {
                    format!("seed {} {v}->{u}: {:?}", c.seed, o.paths[v][u])
                })?;
            }
        }
    }
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    let nodes: usize = outcomes.iter().map(|o| o.case.nodes).sum();
    Ok(format!("100 graphs, {nodes} nodes, all tables equal BFS reachability, {} ms", elapsed.as_millis()))
}

fn tree_delivery() -> Check {
    let cases: Vec<_> = (0..50).map(|seed| GraphCase::tree(1_000 + seed, 8)).collect();
    let mut pairs = 0;
    for o in sweep(&cases) {
        let c = &o.case;
        ensure(o.quiescent(), || format!("seed {}: not quiescent", c.seed))?;
        for s in 0..c.nodes {
            let dist = bfs(c.nodes, &c.edges, s);
            for d in (0..c.nodes).filter(|&d| d != s) {
                let want = dist[d].ok_or("tree is disconnected")?;
                match &o.paths[s][d] {
                    Some(PathOutcome::Delivered { hops }) if *hops == want => pairs += 1,
                    other => return Err(format!("seed {} {s}->{d}: {other:?}, shortest {want}", c.seed)),
                }
            }
        }
        ensure(o.report.counters.packets_dropped.is_empty(), || format!("seed {}: drops", c.seed))?;
    }
    Ok(format!("50 trees, {pairs} ordered pairs delivered in exactly the BFS hop count, no drops"))
}

fn session_scenarios() -> Check {
    let names = ["mobile_scribe", "multi_room", "late_joiner"];
    for name in names {
        let o = pbn(&["run", path(&scenario(name))]);
        ensure(o.status.code() == Some(0), || {
            format!("{name}: exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stdout))
        })?;
    }
    Ok(format!("{} exit 0", names.join(", ")))
}

fn five_device() -> Check {
    let (code, s) = run_with_summary("five_device", &[])?;
    ensure(code == 0, || format!("exit {code}"))?;
    let title = "Research MOU.txt";
    let bruce = &s["nodes"]["BRUCE"];
    let doc = bruce["my_moms"]
        .as_array()
        .and_then(|d| d.iter().find(|d| d["title"] == title))
        .ok_or("BRUCE has no such MoM")?;
    let mut shared: Vec<&str> =
        doc["shared_with"].as_array().ok_or("no shared_with")?.iter().filter_map(|v| v.as_str()).map(social).collect();
    shared.sort_unstable();
    ensure(shared == ["DUOS", "MOTO"], || format!("shared_with {shared:?}"))?;
    for (node, expect) in [("DUOS", true), ("MOTO", true), ("UNITE", false), ("DESIRE", false), ("BRUCE", false)] {
        let titles: Vec<&str> = s["nodes"][node]["shared_moms"]
            .as_array()
            .ok_or("no shared_moms")?
            .iter()
            .filter_map(|d| d["title"].as_str())
            .collect();
        let want: Vec<&str> = if expect { vec![title] } else { vec![] };
        ensure(titles == want, || format!("{node} Shared MoMs {titles:?}"))?;
        if expect {
            let owner = s["nodes"][node]["shared_moms"][0]["owned_by"].as_str().unwrap_or("");
            ensure(social(owner) == "BRUCE", || format!("{node} copy owned by {owner}"))?;
        }
    }
    Ok("shared_with = {DUOS, MOTO}; Shared MoMs hold the copy on exactly DUOS and MOTO".into())
}

fn dev(name: &str) -> DeviceId {
    make_device_id(name, "9890000000").expect("valid id")
}

/// Role per node: `None` idle, `Some(i)` in node `i`'s session (itself for
/// the Scribe).
fn role_assignments() -> Vec<[Option<usize>; 3]> {
    let choices = [None, Some(0), Some(1), Some(2)];
    let mut out = Vec::new();
    for a in choices {
        for b in choices {
            for c in choices {
                let r = [a, b, c];
                // A member's host must be a Scribe.
                if r.iter().enumerate().all(|(i, x)| x.is_none_or(|h| h == i || r[h] == Some(h))) {
                    out.push(r);
                }
            }
        }
    }
    out
}

struct Attempt {
    t: u64,
    node: DeviceId,
    kind: &'static str,
}

fn act(w: &mut World, t: u64, action: UserAction) {
    w.schedule(t, EventKind::UserAction(action)).expect("future tick");
}

fn settle(w: &mut World) -> Result<(), String> {
    w.run_until_quiescent(1_000).map(|_| ()).map_err(|e| e.to_string())
}

/// Each non-owned title gets one edit and one share attempt on its own tick.
fn attempt_all(w: &mut World, names: &[&str], attempts: &mut Vec<Attempt>, live_only: bool) -> Result<(), String> {
    let mut t = w.now() + 1;
    for n in names {
        let node = dev(n);
        let store = w.store(&node).ok_or("node vanished")?;
        let titles: BTreeSet<String> = if live_only {
            store.live_views().map(|d| d.title.clone()).collect()
        } else {
            store.shared_moms().map(|d| d.title.clone()).collect()
        };
        for title in titles {
            act(w, t, UserAction::Edit { node: node.clone(), title: title.clone(), content: "x".into() });
            attempts.push(Attempt { t, node: node.clone(), kind: "not_owner" });
            t += 1;
            act(w, t, UserAction::Share { node: node.clone(), title, to: vec![] });
            attempts.push(Attempt { t, node: node.clone(), kind: "reshare_forbidden" });
            t += 1;
        }
    }
    settle(w)
}

fn permissions() -> Check {
    let names = ["A", "B", "C"];
    let assignments = role_assignments();
    let mut total = 0;
    for roles in &assignments {
        let mut w = World::new(SimConfig::default()).with_invariant_checks();
        for n in names {
            w.schedule(0, EventKind::AddNode(dev(n))).expect("t=0");
        }
        for (a, b) in [("A", "B"), ("B", "C"), ("A", "C")] {
            w.schedule(0, EventKind::AddEdge(dev(a), dev(b))).expect("t=0");
        }
        for (i, r) in roles.iter().enumerate() {
            if *r == Some(i) {
                act(&mut w, 2, UserAction::Host { node: dev(names[i]), title: format!("room {}", names[i]) });
            }
        }
        for (i, r) in roles.iter().enumerate() {
            if let Some(h) = r.filter(|h| *h != i) {
                act(&mut w, 3, UserAction::Join { node: dev(names[i]), peer: dev(names[h]) });
            }
        }
        for n in names {
            act(&mut w, 6, UserAction::Create { node: dev(n), title: format!("notes {n}") });
            act(&mut w, 7, UserAction::Edit { node: dev(n), title: format!("notes {n}"), content: format!("by {n}") });
        }
        settle(&mut w)?;
        for (i, r) in roles.iter().enumerate() {
            let got = w.sessions().role(&dev(names[i]));
            let ok = match (r, &got) {
                (None, Role::Idle) => true,
                (Some(h), Role::Scribe(_)) => *h == i,
                (Some(h), Role::Member(_)) => *h != i && w.sessions().host_of(&dev(names[i])) == Some(&dev(names[*h])),
                _ => false,
            };
            ensure(ok, || format!("{roles:?}: {} is {got}", names[i]))?;
        }

        let mut attempts = Vec::new();
        attempt_all(&mut w, &names, &mut attempts, true)?;
        let t = w.now() + 1;
        for n in names {
            let others: Vec<DeviceId> = names.iter().filter(|o| **o != n).map(|o| dev(o)).collect();
            act(&mut w, t, UserAction::Share { node: dev(n), title: format!("notes {n}"), to: others });
        }
        settle(&mut w)?;
        let t = w.now() + 1;
        for n in names {
            for o in names.iter().filter(|o| **o != n) {
                let decision = pbn_core::mom::OfferDecision::Accept;
                act(
                    &mut w,
                    t,
                    UserAction::Respond { node: dev(n), owner: dev(o), title: format!("notes {o}"), decision },
                );
            }
        }
        settle(&mut w)?;
        attempt_all(&mut w, &names, &mut attempts, false)?;
        ensure(w.violations().is_empty(), || format!("{roles:?}: {:?}", w.violations()))?;

        let lines = parse_trace(&w.trace_text()).map_err(|e| e.to_string())?;
        let errors: Vec<&TraceLine> = lines.iter().filter(|l| l.kind() == Some("error")).collect();
        ensure(errors.len() == attempts.len(), || {
            format!("{roles:?}: {} errors for {} attempts", errors.len(), attempts.len())
        })?;
        let members = roles.iter().enumerate().filter(|(i, r)| r.is_some_and(|h| h != *i)).count();
        let live_attempts = attempts.len() - 2 * 6;
        ensure(live_attempts == 2 * members, || format!("{roles:?}: {live_attempts} live-view attempts"))?;
        for a in &attempts {
            let hit = errors.iter().find(|l| l.t == a.t && l.node() == a.node.canonical());
            let Some(line) = hit else { return Err(format!("{roles:?}: no error at t={}", a.t)) };
            ensure(line.raw("error") == Some(a.kind), || format!("{roles:?}: {line}"))?;
            if a.kind == "not_owner" {
                let detail = line.get("detail").unwrap_or_default();
                ensure(detail == ONLY_SCRIBE_CAN_EDIT, || format!("{roles:?}: detail {detail:?}"))?;
            }
        }
        total += attempts.len();
    }
    Ok(format!("{} role assignments, {total} refused edits and re-shares, none allowed", assignments.len()))
}

const BUNDLED: [&str; 7] =
    ["star", "line4", "mobile_scribe", "multi_room", "late_joiner", "five_device", "count_to_infinity"];

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = 0;
    for name in BUNDLED {
        let mut traces = Vec::new();
        for i in 0..2 {
            let p = dir.path().join(format!("{name}.{i}.trace"));
            let file = scenario(name);
            pbn(&["run", path(&file), "--trace", path(&p)]);
            traces.push(fs::read(&p).map_err(|e| format!("{name}: {e}"))?);
        }
        ensure(traces[0] == traces[1], || format!("{name}: traces differ"))?;
        ensure(!traces[0].is_empty(), || format!("{name}: empty trace"))?;
        bytes += traces[0].len();
    }
    Ok(format!("{} scenarios run twice, {bytes} trace bytes identical", BUNDLED.len()))
}

fn count_to_infinity() -> Check {
    let (code, s) = run_with_summary("count_to_infinity", &["--faithful-routing", "--split-horizon", "off"])?;
    ensure(code == 3, || format!("literal rules without split horizon: exit {code}"))?;
    ensure(s["outcome"] == "non_quiescent", || format!("outcome {}", s["outcome"]))?;
    let updates = s["report"]["routing_updates"].as_u64().ok_or("no update count")?;
    ensure(updates > 0, || "no updates sent".into())?;
    let (code, s) = run_with_summary("count_to_infinity", &[])?;
    ensure(code == 0, || format!("defaults: exit {code}"))?;
    let settled = s["report"]["routing_updates"].as_u64().ok_or("no update count")?;
    Ok(format!("literal rules: exit 3 after {updates} updates; defaults: exit 0 after {settled}"))
}

/// Replays one trace: broadcasts happen exactly at the ticks where a node's
/// key set ends up different, every broadcast send follows its broadcast
/// line, and replies answer an update received that tick.
fn audit_trace(trace: &str) -> Result<(usize, usize), String> {
    let lines = parse_trace(trace).map_err(|e| e.to_string())?;
    let mut keys: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let (mut broadcasts, mut updates) = (0, 0);
    let mut i = 0;
    while i < lines.len() {
        let t = lines[i].t;
        let tick: Vec<&TraceLine> = lines[i..].iter().take_while(|l| l.t == t).collect();
        i += tick.len();
        let start = keys.clone();
        let mut announced: BTreeSet<String> = BTreeSet::new();
        let mut received: BTreeSet<(String, String)> = BTreeSet::new();
        for l in &tick {
            let node = l.node();
            match l.kind() {
                Some("table") => {
                    let table = decode_table(l.raw("table").unwrap_or("")).ok_or("bad table")?;
                    keys.insert(node, table.into_keys().collect());
                }
                Some("broadcast") => {
                    let before = start.get(&node).cloned().unwrap_or_default();
                    let now = keys.get(&node).cloned().unwrap_or_default();
                    let added: BTreeSet<String> = decode_list(l.raw("added").unwrap_or("-")).into_iter().collect();
                    let removed: BTreeSet<String> = decode_list(l.raw("removed").unwrap_or("-")).into_iter().collect();
                    let want_added: BTreeSet<String> = now.difference(&before).cloned().collect();
                    let want_removed: BTreeSet<String> = before.difference(&now).cloned().collect();
                    ensure(before != now, || format!("t={t} {node}: broadcast without a key-set change"))?;
                    ensure(added == want_added && removed == want_removed, || format!("t={t} {node}: {l}"))?;
                    announced.insert(node);
                    broadcasts += 1;
                }
                Some("update") if l.raw("update") == Some("recv") && l.raw("reply") == Some("0") => {
                    received.insert((node, l.get("from").unwrap_or_default()));
                }
                Some("update") if l.raw("update") == Some("send") => {
                    updates += 1;
                    match l.raw("cause") {
                        Some("broadcast") => {
                            ensure(announced.contains(&node), || format!("t={t} {node}: unannounced send"))?
                        }
                        Some("reply") => {
                            let to = l.get("to").unwrap_or_default();
                            ensure(!announced.contains(&node) && received.contains(&(node.clone(), to)), || {
                                format!("t={t} {node}: unsolicited reply")
                            })?
                        }
                        other => return Err(format!("t={t} {node}: cause {other:?}")),
                    }
                }
                _ => {}
            }
        }
        for (node, now) in &keys {
            let changed = start.get(node).unwrap_or(&BTreeSet::new()) != now;
            ensure(changed == announced.contains(node), || format!("t={t} {node}: key-set change not broadcast"))?;
        }
    }
    Ok((broadcasts, updates))
}

fn broadcast_audit() -> Check {
    let (mut broadcasts, mut updates) = (0, 0);
    for o in sweep(&connected_cases()) {
        ensure(o.quiescent(), || format!("seed {}: update traffic never stopped", o.case.seed))?;
        let (b, u) = audit_trace(&o.trace).map_err(|e| format!("seed {}: {e}", o.case.seed))?;
        ensure(u as u64 == o.report.counters.routing_updates, || format!("seed {}: update count", o.case.seed))?;
        broadcasts += b;
        updates += u;
    }
    Ok(format!("100 traces, {broadcasts} broadcasts each on a key-set change, {updates} updates in total"))
}
