#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use pbn_core::identity::{make_device_id, DeviceId};

/// Hop distances from `s`; `None` when unreachable.
pub fn bfs(n: usize, edges: &[(usize, usize)], s: usize) -> Vec<Option<usize>> {
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

pub fn id(name: &str) -> DeviceId {
    make_device_id(name, "9810000000").unwrap()
}

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}
