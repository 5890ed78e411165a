//! Minutes-of-meeting documents and the per-device store.
//!
//! Each device holds two lists: *My MoMs*, the documents it created, and
//! *Shared MoMs*, the documents other Scribes shared with it and it accepted.
//! Only the owner can edit, and shared copies can never be shared onward.
//! Session members additionally keep a live, read-only view of documents the
//! Scribe is editing; it is not a file and is not persisted.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::DeviceId;

/// Message shown to anyone but the owner who tries to edit.
pub const ONLY_SCRIBE_CAN_EDIT: &str = "Only Scribe Can Edit";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MomError {
    #[error("title is empty")]
    EmptyTitle,
    #[error("a MoM titled {0:?} already exists")]
    DuplicateTitle(String),
    #[error("{}", ONLY_SCRIBE_CAN_EDIT)]
    NotOwner,
    #[error("shared MoMs cannot be shared again")]
    ReShareForbidden,
    #[error("no MoM {0}")]
    NotFound(String),
    #[error("stale update for {doc}: revision {update} < local {local}")]
    StaleUpdate { doc: DocId, update: u64, local: u64 },
    #[error("update is for {got}, copy is {expected}")]
    UnknownDocument { expected: DocId, got: DocId },
    #[error("offer addressed to {0}")]
    WrongRecipient(DeviceId),
}

impl MomError {
    pub fn kind(&self) -> &'static str {
        match self {
            MomError::EmptyTitle => "empty_title",
            MomError::DuplicateTitle(_) => "duplicate_title",
            MomError::NotOwner => "not_owner",
            MomError::ReShareForbidden => "reshare_forbidden",
            MomError::NotFound(_) => "not_found",
            MomError::StaleUpdate { .. } => "stale_update",
            MomError::UnknownDocument { .. } => "unknown_document",
            MomError::WrongRecipient(_) => "wrong_recipient",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocId(String);

impl DocId {
    pub fn new(owner: &DeviceId, serial: u64) -> Self {
        DocId(format!("{owner}/{serial}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ListKind {
    MyMoMs,
    SharedMoMs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoMDocument {
    pub doc_id: DocId,
    pub title: String,
    pub content: String,
    pub revision: u64,
    pub owned_by: DeviceId,
    /// Recipients that accepted, in acceptance order.
    pub shared_with: Vec<DeviceId>,
}

/// Full-content push from the Scribe to session members.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealTimeUpdate {
    pub doc_id: DocId,
    pub title: String,
    /// Revision the owner's copy reached with this content.
    pub base_revision: u64,
    pub new_content: String,
    pub origin: DeviceId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileOffer {
    pub doc_id: DocId,
    pub title: String,
    pub content: String,
    pub revision: u64,
    pub owner: DeviceId,
    pub recipient: DeviceId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfferDecision {
    Accept,
    Reject,
}

/// Acknowledgment routed back to the owner when a recipient accepts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptance {
    pub doc_id: DocId,
    pub recipient: DeviceId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileOp {
    Read,
    Rename(String),
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileOpResult {
    Content(String),
    Renamed,
    Deleted,
}

impl MoMDocument {
    pub fn new(doc_id: DocId, owner: DeviceId, title: impl Into<String>) -> Self {
        MoMDocument {
            doc_id,
            title: title.into(),
            content: String::new(),
            revision: 0,
            owned_by: owner,
            shared_with: Vec::new(),
        }
    }

    /// Commits new content. Identical content still bumps the revision.
    pub fn edit(&mut self, actor: &DeviceId, new_content: &str) -> Result<RealTimeUpdate, MomError> {
        if *actor != self.owned_by {
            return Err(MomError::NotOwner);
        }
        self.content = new_content.to_owned();
        self.revision += 1;
        Ok(self.realtime_update())
    }

    /// Current content packaged for members.
    pub fn realtime_update(&self) -> RealTimeUpdate {
        RealTimeUpdate {
            doc_id: self.doc_id.clone(),
            title: self.title.clone(),
            base_revision: self.revision,
            new_content: self.content.clone(),
            origin: self.owned_by.clone(),
        }
    }
}

/// Replaces a member copy wholesale with a newer revision.
pub fn apply_realtime_update(copy: &mut MoMDocument, update: &RealTimeUpdate) -> Result<(), MomError> {
    if copy.doc_id != update.doc_id || copy.owned_by != update.origin {
        return Err(MomError::UnknownDocument { expected: copy.doc_id.clone(), got: update.doc_id.clone() });
    }
    if update.base_revision < copy.revision {
        return Err(MomError::StaleUpdate {
            doc: copy.doc_id.clone(),
            update: update.base_revision,
            local: copy.revision,
        });
    }
    copy.content.clone_from(&update.new_content);
    copy.revision = update.base_revision;
    Ok(())
}

/// Documents held by one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomStore {
    device: DeviceId,
    my_moms: BTreeMap<DocId, MoMDocument>,
    shared_moms: BTreeMap<DocId, MoMDocument>,
    live: BTreeMap<DocId, MoMDocument>,
    pending_offers: BTreeMap<DocId, FileOffer>,
    drafts: BTreeMap<DocId, String>,
    next_serial: u64,
}

impl MomStore {
    pub fn new(device: DeviceId) -> Self {
        MomStore {
            device,
            my_moms: BTreeMap::new(),
            shared_moms: BTreeMap::new(),
            live: BTreeMap::new(),
            pending_offers: BTreeMap::new(),
            drafts: BTreeMap::new(),
            next_serial: 0,
        }
    }

    pub fn device(&self) -> &DeviceId {
        &self.device
    }

    pub fn my_moms(&self) -> impl Iterator<Item = &MoMDocument> {
        self.my_moms.values()
    }

    pub fn shared_moms(&self) -> impl Iterator<Item = &MoMDocument> {
        self.shared_moms.values()
    }

    pub fn live_views(&self) -> impl Iterator<Item = &MoMDocument> {
        self.live.values()
    }

    pub fn live_view(&self, doc_id: &DocId) -> Option<&MoMDocument> {
        self.live.get(doc_id)
    }

    pub fn pending_offers(&self) -> impl Iterator<Item = &FileOffer> {
        self.pending_offers.values()
    }

    pub fn get(&self, doc_id: &DocId) -> Option<(ListKind, &MoMDocument)> {
        self.my_moms
            .get(doc_id)
            .map(|d| (ListKind::MyMoMs, d))
            .or_else(|| self.shared_moms.get(doc_id).map(|d| (ListKind::SharedMoMs, d)))
    }

    pub fn find_by_title(&self, kind: ListKind, title: &str) -> Option<&MoMDocument> {
        let list = match kind {
            ListKind::MyMoMs => &self.my_moms,
            ListKind::SharedMoMs => &self.shared_moms,
        };
        list.values().find(|d| d.title == title)
    }

    pub fn create_mom(&mut self, title: &str) -> Result<DocId, MomError> {
        if title.is_empty() {
            return Err(MomError::EmptyTitle);
        }
        if self.find_by_title(ListKind::MyMoMs, title).is_some() {
            return Err(MomError::DuplicateTitle(title.to_owned()));
        }
        self.next_serial += 1;
        let doc_id = DocId::new(&self.device, self.next_serial);
        self.my_moms.insert(doc_id.clone(), MoMDocument::new(doc_id.clone(), self.device.clone(), title));
        Ok(doc_id)
    }

    fn editable(&mut self, doc_id: &DocId) -> Result<&mut MoMDocument, MomError> {
        if let Some(doc) = self.my_moms.get_mut(doc_id) {
            return Ok(doc);
        }
        if self.shared_moms.contains_key(doc_id) || self.live.contains_key(doc_id) {
            return Err(MomError::NotOwner);
        }
        Err(MomError::NotFound(doc_id.to_string()))
    }

    pub fn edit_mom(&mut self, doc_id: &DocId, new_content: &str) -> Result<RealTimeUpdate, MomError> {
        let device = self.device.clone();
        let update = self.editable(doc_id)?.edit(&device, new_content)?;
        self.drafts.remove(doc_id);
        Ok(update)
    }

    /// Stages typed content for the next auto-save. Returns true when the
    /// document had no pending draft.
    pub fn stage_draft(&mut self, doc_id: &DocId, content: &str) -> Result<bool, MomError> {
        self.editable(doc_id)?;
        Ok(self.drafts.insert(doc_id.clone(), content.to_owned()).is_none())
    }

    /// Commits the pending draft, if any.
    pub fn autosave(&mut self, doc_id: &DocId) -> Result<Option<RealTimeUpdate>, MomError> {
        match self.drafts.get(doc_id).cloned() {
            Some(content) => self.edit_mom(doc_id, &content).map(Some),
            None => Ok(None),
        }
    }

    /// Applies a Scribe push to the live view, creating it on first sight.
    pub fn apply_live(&mut self, update: &RealTimeUpdate) -> Result<(), MomError> {
        if update.origin == self.device {
            return Err(MomError::NotOwner);
        }
        let copy = self.live.entry(update.doc_id.clone()).or_insert_with(|| MoMDocument {
            doc_id: update.doc_id.clone(),
            title: update.title.clone(),
            content: String::new(),
            revision: 0,
            owned_by: update.origin.clone(),
            shared_with: Vec::new(),
        });
        apply_realtime_update(copy, update)
    }

    /// Creates one offer per recipient. Only documents in My MoMs can be shared.
    pub fn share_mom(&self, doc_id: &DocId, recipients: &[DeviceId]) -> Result<Vec<FileOffer>, MomError> {
        let doc = match self.get(doc_id) {
            Some((ListKind::MyMoMs, doc)) => doc,
            Some((ListKind::SharedMoMs, _)) => return Err(MomError::ReShareForbidden),
            None if self.live.contains_key(doc_id) => return Err(MomError::ReShareForbidden),
            None => return Err(MomError::NotFound(doc_id.to_string())),
        };
        if doc.owned_by != self.device {
            return Err(MomError::NotOwner);
        }
        Ok(recipients
            .iter()
            .filter(|r| **r != self.device)
            .map(|r| FileOffer {
                doc_id: doc.doc_id.clone(),
                title: doc.title.clone(),
                content: doc.content.clone(),
                revision: doc.revision,
                owner: doc.owned_by.clone(),
                recipient: r.clone(),
            })
            .collect())
    }

    /// Holds an arrived offer until the user answers it.
    pub fn receive_offer(&mut self, offer: FileOffer) -> Result<(), MomError> {
        if offer.recipient != self.device {
            return Err(MomError::WrongRecipient(offer.recipient));
        }
        self.pending_offers.insert(offer.doc_id.clone(), offer);
        Ok(())
    }

    pub fn pending_offer(&self, owner: &DeviceId, title: &str) -> Option<&FileOffer> {
        self.pending_offers.values().find(|o| o.owner == *owner && o.title == title)
    }

    /// Answers an offer. Accepting returns the acknowledgment for the owner;
    /// accepting the same document twice keeps a single copy.
    pub fn respond_to_offer(
        &mut self,
        offer: &FileOffer,
        decision: OfferDecision,
    ) -> Result<Option<Acceptance>, MomError> {
        if offer.recipient != self.device {
            return Err(MomError::WrongRecipient(offer.recipient.clone()));
        }
        self.pending_offers.remove(&offer.doc_id);
        match decision {
            OfferDecision::Reject => Ok(None),
            OfferDecision::Accept => {
                self.shared_moms.entry(offer.doc_id.clone()).or_insert_with(|| MoMDocument {
                    doc_id: offer.doc_id.clone(),
                    title: offer.title.clone(),
                    content: offer.content.clone(),
                    revision: offer.revision,
                    owned_by: offer.owner.clone(),
                    shared_with: Vec::new(),
                });
                Ok(Some(Acceptance { doc_id: offer.doc_id.clone(), recipient: self.device.clone() }))
            }
        }
    }

    /// Owner side of an acceptance. Returns false if the recipient was
    /// already listed.
    pub fn record_acceptance(&mut self, ack: &Acceptance) -> Result<bool, MomError> {
        let doc = self.my_moms.get_mut(&ack.doc_id).ok_or_else(|| MomError::NotFound(ack.doc_id.to_string()))?;
        if doc.shared_with.contains(&ack.recipient) {
            return Ok(false);
        }
        doc.shared_with.push(ack.recipient.clone());
        Ok(true)
    }

    /// Read, rename or delete the local copy in either list.
    pub fn file_operation(&mut self, doc_id: &DocId, op: FileOp) -> Result<FileOpResult, MomError> {
        let not_found = || MomError::NotFound(doc_id.to_string());
        let (kind, _) = self.get(doc_id).ok_or_else(not_found)?;
        match op {
            FileOp::Read => Ok(FileOpResult::Content(self.get(doc_id).ok_or_else(not_found)?.1.content.clone())),
            FileOp::Rename(title) => {
                if title.is_empty() {
                    return Err(MomError::EmptyTitle);
                }
                if kind == ListKind::MyMoMs && self.find_by_title(kind, &title).is_some_and(|d| d.doc_id != *doc_id) {
                    return Err(MomError::DuplicateTitle(title));
                }
                let list = match kind {
                    ListKind::MyMoMs => &mut self.my_moms,
                    ListKind::SharedMoMs => &mut self.shared_moms,
                };
                list.get_mut(doc_id).ok_or_else(not_found)?.title = title;
                Ok(FileOpResult::Renamed)
            }
            FileOp::Delete => {
                match kind {
                    ListKind::MyMoMs => {
                        self.my_moms.remove(doc_id);
                        self.drafts.remove(doc_id);
                    }
                    ListKind::SharedMoMs => {
                        self.shared_moms.remove(doc_id);
                    }
                }
                Ok(FileOpResult::Deleted)
            }
        }
    }
}
