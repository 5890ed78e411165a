//! Device identities, service advertisements and discovery notifications.
//!
//! A [`DeviceId`] pairs the human-readable social name with the SIM number of
//! the device. Peers only ever display the social part; the canonical
//! `name#sim` string is what the protocol keys on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Delimiter between the social name and the SIM number.
pub const ID_SEPARATOR: char = '#';

const SIM_MIN_DIGITS: usize = 10;
const SIM_MAX_DIGITS: usize = 20;

/// Metadata key carrying the name of the session a device hosts.
pub const HOSTS_SESSION_KEY: &str = "hosts_session";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("social name is empty")]
    EmptyName,
    #[error("social name {0:?} contains the reserved character '#'")]
    ReservedCharacter(String),
    #[error("SIM number {0:?} must be 10 to 20 decimal digits")]
    InvalidSim(String),
    #[error("malformed canonical device id {0:?}")]
    Malformed(String),
}

/// Globally unique peer identifier.
///
/// Equality, ordering and hashing all go through the canonical string, so two
/// ids compare equal exactly when their `name#sim` forms do.
#[derive(Clone)]
pub struct DeviceId {
    canonical: String,
    split: usize,
}

impl DeviceId {
    pub fn new(social_name: &str, sim_number: &str) -> Result<Self, IdentityError> {
        make_device_id(social_name, sim_number)
    }

    pub fn social_name(&self) -> &str {
        &self.canonical[..self.split]
    }

    pub fn sim_number(&self) -> &str {
        &self.canonical[self.split + 1..]
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }
}

/// Builds a [`DeviceId`] from its two components.
pub fn make_device_id(social_name: &str, sim_number: &str) -> Result<DeviceId, IdentityError> {
    if social_name.is_empty() {
        return Err(IdentityError::EmptyName);
    }
    if social_name.contains(ID_SEPARATOR) {
        return Err(IdentityError::ReservedCharacter(social_name.to_owned()));
    }
    let len_ok = (SIM_MIN_DIGITS..=SIM_MAX_DIGITS).contains(&sim_number.len());
    if !len_ok || !sim_number.bytes().all(|b| b.is_ascii_digit()) {
        return Err(IdentityError::InvalidSim(sim_number.to_owned()));
    }
    Ok(DeviceId { canonical: format!("{social_name}{ID_SEPARATOR}{sim_number}"), split: social_name.len() })
}

/// What other members get to see of a device: its social name only.
pub fn social_view(id: &DeviceId) -> &str {
    id.social_name()
}

impl FromStr for DeviceId {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, sim) = s.split_once(ID_SEPARATOR).ok_or_else(|| IdentityError::Malformed(s.to_owned()))?;
        make_device_id(name, sim)
    }
}

impl PartialEq for DeviceId {
    fn eq(&self, other: &Self) -> bool {
        self.canonical == other.canonical
    }
}

impl Eq for DeviceId {}

impl PartialOrd for DeviceId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DeviceId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical.cmp(&other.canonical)
    }
}

impl std::hash::Hash for DeviceId {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.canonical.hash(state);
    }
}

impl fmt::Debug for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceId({})", self.canonical)
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

impl Serialize for DeviceId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical)
    }
}

impl<'de> Deserialize<'de> for DeviceId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdvertisementError {
    #[error("object path {0:?} must begin with '/'")]
    BadObjectPath(String),
    #[error("contact port must be in 1..=65535")]
    BadPort,
}

/// A producer-side service advertisement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advertisement {
    pub device: DeviceId,
    pub object_path: String,
    pub contact_port: u16,
    pub metadata: BTreeMap<String, String>,
}

impl Advertisement {
    pub const DEFAULT_OBJECT_PATH: &'static str = "/minomee";
    pub const DEFAULT_PORT: u16 = 42;

    pub fn new(
        device: DeviceId,
        object_path: impl Into<String>,
        contact_port: u16,
    ) -> Result<Self, AdvertisementError> {
        let object_path = object_path.into();
        if !object_path.starts_with('/') {
            return Err(AdvertisementError::BadObjectPath(object_path));
        }
        if contact_port == 0 {
            return Err(AdvertisementError::BadPort);
        }
        Ok(Advertisement { device, object_path, contact_port, metadata: BTreeMap::new() })
    }

    pub fn hosted_session(&self) -> Option<&str> {
        self.metadata.get(HOSTS_SESSION_KEY).map(String::as_str)
    }

    pub fn set_hosted_session(&mut self, session: Option<&str>) {
        match session {
            Some(name) => {
                self.metadata.insert(HOSTS_SESSION_KEY.to_owned(), name.to_owned());
            }
            None => {
                self.metadata.remove(HOSTS_SESSION_KEY);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiscoveryKind {
    PeerLost,
    PeerFound,
}

impl DiscoveryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscoveryKind::PeerFound => "found",
            DiscoveryKind::PeerLost => "lost",
        }
    }
}

/// Router notification handed to the application when the neighborhood changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryEvent {
    pub kind: DiscoveryKind,
    pub subject: DeviceId,
    pub observer: DeviceId,
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("observer {0} appears in its own neighbor set")]
pub struct ObserverInNeighborSet(pub DeviceId);

/// Turns a neighborhood change into an ordered list of notifications.
///
/// Losses come first, then arrivals; each group follows canonical id order.
pub fn emit_discovery_events(
    old_neighbors: &BTreeSet<DeviceId>,
    new_neighbors: &BTreeSet<DeviceId>,
    observer: &DeviceId,
    time: u64,
) -> Result<Vec<DiscoveryEvent>, ObserverInNeighborSet> {
    if old_neighbors.contains(observer) || new_neighbors.contains(observer) {
        return Err(ObserverInNeighborSet(observer.clone()));
    }
    let event =
        |kind, subject: &DeviceId| DiscoveryEvent { kind, subject: subject.clone(), observer: observer.clone(), time };
    let lost = old_neighbors.difference(new_neighbors).map(|p| event(DiscoveryKind::PeerLost, p));
    let found = new_neighbors.difference(old_neighbors).map(|p| event(DiscoveryKind::PeerFound, p));
    Ok(lost.chain(found).collect())
}
