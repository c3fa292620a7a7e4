//! Stack-inspection style permission evaluation over call chains.
//!
//! A request is allowed only when every principal in the chain holds the
//! permission: the intersection rule. A deputy that wants to act on its own
//! behalf drops its antecedents before calling, shrinking the chain to itself.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::authority::Authority;
use crate::types::{CallChain, PermissionToken, Principal, Statement};

/// uid to granted permissions, frozen for the duration of an evaluation.
#[derive(Debug, Clone, Default)]
pub struct PermissionTable {
    grants: HashMap<u32, BTreeSet<PermissionToken>>,
}

impl PermissionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn grant(&mut self, uid: u32, permissions: impl IntoIterator<Item = PermissionToken>) {
        self.grants.entry(uid).or_default().extend(permissions);
    }

    /// Unknown uids hold no permissions.
    pub fn holds(&self, uid: u32, permission: &PermissionToken) -> bool {
        self.grants.get(&uid).is_some_and(|set| set.contains(permission))
    }

    /// Snapshot of the authority's directory.
    pub fn from_authority(authority: &Authority) -> Self {
        let mut table = Self::new();
        for (uid, identity) in authority.directory_snapshot() {
            table.grant(uid, identity.permissions);
        }
        table
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(DenyCause),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenyCause {
    /// Nobody vouches for an empty chain.
    EmptyChain,
    /// Index of the first (most recent) link lacking the permission.
    UnprivilegedLink { index: usize },
    /// A demanded speaker had no valid statement attached.
    StatementMissing { speaker: Principal },
}

impl Decision {
    pub fn is_allow(self) -> bool {
        matches!(self, Decision::Allow)
    }
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decision::Allow => f.write_str("allow"),
            Decision::Deny(DenyCause::EmptyChain) => f.write_str("deny (empty chain)"),
            Decision::Deny(DenyCause::UnprivilegedLink { index }) => {
                write!(f, "deny (link {index} unprivileged)")
            }
            Decision::Deny(DenyCause::StatementMissing { speaker }) => {
                write!(f, "deny (no valid statement from {speaker})")
            }
        }
    }
}

/// Allow iff the chain is non-empty and every link's uid holds `permission`.
pub fn evaluate(chain: &CallChain, permission: &PermissionToken, table: &PermissionTable) -> Decision {
    if chain.is_empty() {
        return Decision::Deny(DenyCause::EmptyChain);
    }
    for (index, link) in chain.iter().enumerate() {
        if !table.holds(link.uid, permission) {
            return Decision::Deny(DenyCause::UnprivilegedLink { index });
        }
    }
    Decision::Allow
}

/// Chain check plus statement demands: every principal in `required_speakers`
/// must have a statement in `statements` that the authority deems valid.
pub fn evaluate_with_statements(
    chain: &CallChain,
    permission: &PermissionToken,
    table: &PermissionTable,
    statements: &[Statement],
    required_speakers: &BTreeSet<Principal>,
    authority: &Authority,
) -> Decision {
    let chain_decision = evaluate(chain, permission, table);
    if !chain_decision.is_allow() {
        return chain_decision;
    }
    let mut vouched: HashSet<Principal> = HashSet::new();
    for stmt in statements {
        if authority.verify_statement(stmt).is_valid() {
            vouched.insert(stmt.speaker);
        }
    }
    for speaker in required_speakers {
        if !vouched.contains(speaker) {
            return Decision::Deny(DenyCause::StatementMissing { speaker: *speaker });
        }
    }
    Decision::Allow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authority::Authority;
    use crate::crypto::{self, MacAlgorithm};
    use crate::types::{AppIdentity, Message, Statement};
    use proptest::prelude::*;

    fn p(uid: u32) -> Principal {
        Principal::new(uid, uid)
    }

    fn fine_location() -> PermissionToken {
        PermissionToken::new("FINE_LOCATION")
    }

    fn table(entries: &[(u32, &[&str])]) -> PermissionTable {
        let mut t = PermissionTable::new();
        for (uid, perms) in entries {
            t.grant(*uid, perms.iter().map(|s| PermissionToken::new(*s)));
        }
        t
    }

    #[test]
    fn deputy_carrying_unprivileged_caller_is_denied() {
        let t = table(&[(1, &["FINE_LOCATION"]), (2, &[])]);
        // Mapper relaying for an evil app: [Mapper, Evil].
        let chain = CallChain::from_links(vec![p(1), p(2)]);
        assert_eq!(
            evaluate(&chain, &fine_location(), &t),
            Decision::Deny(DenyCause::UnprivilegedLink { index: 1 })
        );
    }

    #[test]
    fn deputy_alone_after_privilege_drop_is_allowed() {
        let t = table(&[(1, &["FINE_LOCATION"]), (2, &[])]);
        let chain = CallChain::from_links(vec![p(1)]);
        assert_eq!(evaluate(&chain, &fine_location(), &t), Decision::Allow);
    }

    #[test]
    fn empty_chain_is_denied() {
        let t = table(&[(1, &["FINE_LOCATION"])]);
        assert_eq!(
            evaluate(&CallChain::empty(), &fine_location(), &t),
            Decision::Deny(DenyCause::EmptyChain)
        );
    }

    #[test]
    fn deny_reports_most_recent_unprivileged_link() {
        let t = table(&[(1, &[]), (2, &["FINE_LOCATION"]), (3, &[])]);
        let chain = CallChain::from_links(vec![p(2), p(1), p(3)]);
        assert_eq!(
            evaluate(&chain, &fine_location(), &t),
            Decision::Deny(DenyCause::UnprivilegedLink { index: 1 })
        );
    }

    #[test]
    fn unknown_uid_holds_nothing() {
        let t = table(&[]);
        let chain = CallChain::from_links(vec![p(9)]);
        assert_eq!(
            evaluate(&chain, &fine_location(), &t),
            Decision::Deny(DenyCause::UnprivilegedLink { index: 0 })
        );
    }

    fn statement_fixture() -> (Authority, Principal, Statement) {
        let authority = Authority::new(MacAlgorithm::HmacSha1);
        let speaker = p(1);
        authority.admit(speaker, AppIdentity::new("Mapper", []));
        let key = authority.register(speaker).unwrap();
        let msg = Message::new("claim", b"ok".to_vec(), 5);
        let tag = crypto::mac_create(&key, &Statement::signing_bytes(&speaker, &msg));
        (authority, speaker, Statement { speaker, message: msg, tag })
    }

    #[test]
    fn statements_conjoined_with_chain_check() {
        let (authority, speaker, stmt) = statement_fixture();
        let t = table(&[(1, &["FINE_LOCATION"])]);
        let chain = CallChain::from_links(vec![speaker]);
        let required: BTreeSet<Principal> = [speaker].into();

        assert_eq!(
            evaluate_with_statements(&chain, &fine_location(), &t, std::slice::from_ref(&stmt), &required, &authority),
            Decision::Allow
        );

        // Same demand with the statement withheld.
        assert_eq!(
            evaluate_with_statements(&chain, &fine_location(), &t, &[], &required, &authority),
            Decision::Deny(DenyCause::StatementMissing { speaker })
        );

        // Tampered statement no longer vouches.
        let mut bad = stmt;
        bad.message.payload[0] ^= 1;
        assert_eq!(
            evaluate_with_statements(&chain, &fine_location(), &t, &[bad], &required, &authority),
            Decision::Deny(DenyCause::StatementMissing { speaker })
        );
    }

    #[test]
    fn privileged_chain_still_needs_statement() {
        let (authority, speaker, _stmt) = statement_fixture();
        let t = table(&[(1, &["FINE_LOCATION"]), (2, &["FINE_LOCATION"])]);
        let chain = CallChain::from_links(vec![p(2), speaker]);
        let required: BTreeSet<Principal> = [speaker].into();
        assert_eq!(
            evaluate_with_statements(&chain, &fine_location(), &t, &[], &required, &authority),
            Decision::Deny(DenyCause::StatementMissing { speaker })
        );
    }

    /// Brute-force restatement of the rule, kept deliberately separate from
    /// `evaluate`: non-empty and all links privileged.
    fn oracle(chain: &CallChain, permission: &PermissionToken, table: &PermissionTable) -> bool {
        !chain.is_empty() && chain.iter().all(|l| table.holds(l.uid, permission))
    }

    #[test]
    fn oracle_equivalence_exhaustive_small() {
        // All chains of length <= 3 over 4 apps, 2 permissions, one grant layout.
        let t = table(&[(0, &["A", "B"]), (1, &["A"]), (2, &["B"]), (3, &[])]);
        let perms = [PermissionToken::new("A"), PermissionToken::new("B")];
        let uids = [0u32, 1, 2, 3];

        let mut chains: Vec<Vec<u32>> = vec![vec![]];
        for _ in 0..3 {
            let mut next = Vec::new();
            for c in &chains {
                for u in uids {
                    let mut c2 = c.clone();
                    c2.push(u);
                    next.push(c2);
                }
            }
            chains.extend(next.clone());
            chains = chains.into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        }

        for links in &chains {
            let chain = CallChain::from_links(links.iter().map(|&u| p(u)).collect());
            for perm in &perms {
                assert_eq!(evaluate(&chain, perm, &t).is_allow(), oracle(&chain, perm, &t));
            }
        }
    }

    proptest! {
        #[test]
        fn oracle_equivalence_randomized(
            grants in proptest::collection::vec(proptest::collection::btree_set(0u8..4, 0..4), 5),
            links in proptest::collection::vec(0u32..5, 0..6),
            perm in 0u8..4,
        ) {
            let mut t = PermissionTable::new();
            for (uid, set) in grants.iter().enumerate() {
                t.grant(uid as u32, set.iter().map(|p| PermissionToken::new(format!("P{p}"))));
            }
            let chain = CallChain::from_links(links.iter().map(|&u| p(u)).collect());
            let perm = PermissionToken::new(format!("P{perm}"));
            prop_assert_eq!(evaluate(&chain, &perm, &t).is_allow(), oracle(&chain, &perm, &t));
        }

        #[test]
        fn adding_links_never_adds_privilege(
            links in proptest::collection::vec(0u32..5, 1..6),
            extra in proptest::collection::vec(0u32..5, 1..4),
            granted in proptest::collection::btree_set(0u32..5, 0..5),
        ) {
            let mut t = PermissionTable::new();
            for uid in &granted {
                t.grant(*uid, [PermissionToken::new("X")]);
            }
            let perm = PermissionToken::new("X");
            let small = CallChain::from_links(links.iter().map(|&u| p(u)).collect());
            let mut grown_links: Vec<Principal> = links.iter().map(|&u| p(u)).collect();
            grown_links.extend(extra.iter().map(|&u| p(u)));
            let grown = CallChain::from_links(grown_links);
            // Intersection semantics: a superset chain allowing implies the subset allows.
            if evaluate(&grown, &perm, &t).is_allow() {
                prop_assert!(evaluate(&small, &perm, &t).is_allow());
            }
        }

        #[test]
        fn decision_is_order_independent(
            links in proptest::collection::vec(0u32..5, 1..6),
            granted in proptest::collection::btree_set(0u32..5, 0..5),
            rotate_by in 0usize..6,
        ) {
            let mut t = PermissionTable::new();
            for uid in &granted {
                t.grant(*uid, [PermissionToken::new("X")]);
            }
            let perm = PermissionToken::new("X");
            let chain = CallChain::from_links(links.iter().map(|&u| p(u)).collect());
            let mut rotated = links.clone();
            rotated.rotate_left(rotate_by % links.len());
            let rotated = CallChain::from_links(rotated.iter().map(|&u| p(u)).collect());
            prop_assert_eq!(
                evaluate(&chain, &perm, &t).is_allow(),
                evaluate(&rotated, &perm, &t).is_allow()
            );
        }
    }
}
