//! Entity database consulted between belief generation and act generation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{BeliefState, BucketTable, DbResult, Domain};

pub type Entity = BTreeMap<String, String>;

/// Which belief entry selects the queried domain when several are present.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSelection {
    #[default]
    LatestEntry,
    FirstEntry,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityDatabase {
    pub tables: BTreeMap<Domain, Vec<Entity>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    /// The queried domain, `None` when the belief holds no TOD domain.
    pub domain: Option<Domain>,
    pub matches: Vec<Entity>,
    pub token: DbResult,
}

impl QueryResult {
    fn no_result() -> Self {
        QueryResult {
            domain: None,
            matches: Vec::new(),
            token: DbResult::NoResult,
        }
    }
}

impl EntityDatabase {
    pub fn from_json(text: &str) -> Result<Self> {
        let db: EntityDatabase = serde_json::from_str(text)?;
        db.validate()?;
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serialization is infallible")
    }

    /// Registry conformance: TOD tables only, every entity named, every
    /// field a registered slot of its domain.
    pub fn validate(&self) -> Result<()> {
        for (domain, entities) in &self.tables {
            if !domain.is_tod() {
                return Err(Error::DatabaseFormat("the chit domain has no table".into()));
            }
            for (i, entity) in entities.iter().enumerate() {
                if !entity.contains_key("name") {
                    return Err(Error::DatabaseFormat(format!("{domain}[{i}] has no `name`")));
                }
                if let Some(slot) = entity.keys().find(|k| !domain.has_slot(k)) {
                    return Err(Error::DatabaseFormat(format!(
                        "{domain}[{i}] has unregistered slot `{slot}`"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.tables.values().all(Vec::is_empty)
    }

    pub fn table(&self, domain: Domain) -> Option<&[Entity]> {
        self.tables.get(&domain).map(Vec::as_slice)
    }

    pub fn query(&self, belief: &BeliefState, buckets: &BucketTable) -> Result<QueryResult> {
        self.query_with(belief, buckets, DomainSelection::default())
    }

    pub fn query_with(
        &self,
        belief: &BeliefState,
        buckets: &BucketTable,
        selection: DomainSelection,
    ) -> Result<QueryResult> {
        let mut tod = belief.entries.iter().filter(|e| e.domain.is_tod());
        let entry = match selection {
            DomainSelection::LatestEntry => tod.next_back(),
            DomainSelection::FirstEntry => tod.next(),
        };
        let Some(entry) = entry else {
            return Ok(QueryResult::no_result());
        };
        let table = self
            .tables
            .get(&entry.domain)
            .ok_or_else(|| Error::UnknownDomain(entry.domain.name().into()))?;

        let constraints: Vec<(String, String)> = entry
            .slots
            .iter()
            .filter(|(_, v)| !v.trim().is_empty())
            .map(|(k, v)| (k.to_lowercase(), v.trim().to_lowercase()))
            .collect();
        let matches: Vec<Entity> = table
            .iter()
            .filter(|entity| {
                constraints.iter().all(|(slot, value)| {
                    entity
                        .get(slot)
                        .is_some_and(|v| v.to_lowercase() == *value)
                })
            })
            .cloned()
            .collect();
        let token = buckets.bucket(matches.len());
        Ok(QueryResult {
            domain: Some(entry.domain),
            matches,
            token,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(pairs: &[(&str, &str)]) -> Entity {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn toy() -> EntityDatabase {
        let mut db = EntityDatabase::default();
        db.tables.insert(
            Domain::Hotel,
            vec![
                entity(&[("name", "alpha lodge"), ("price", "cheap"), ("area", "west")]),
                entity(&[("name", "bravo house"), ("price", "cheap"), ("area", "north")]),
                entity(&[("name", "city inn"), ("price", "expensive"), ("area", "west")]),
            ],
        );
        db.tables.insert(Domain::Restaurant, vec![entity(&[("name", "golden wok"), ("food", "chinese")])]);
        db
    }

    #[test]
    fn two_cheap_hotels_give_db_2() {
        let mut b = BeliefState::new();
        b.set(Domain::Hotel, "price", "cheap");
        let r = toy().query(&b, &BucketTable::default()).unwrap();
        assert_eq!(r.token, DbResult::Two);
        assert_eq!(r.matches.len(), 2);
        assert_eq!(r.domain, Some(Domain::Hotel));
    }

    #[test]
    fn chit_belief_gives_db_nore() {
        let r = toy()
            .query(&BeliefState::chit(["money", "happiness"]), &BucketTable::default())
            .unwrap();
        assert_eq!(r.token, DbResult::NoResult);
        assert!(r.matches.is_empty());
    }

    #[test]
    fn empty_constraints_match_everything() {
        let mut b = BeliefState::new();
        b.set(Domain::Hotel, "price", "");
        let r = toy().query(&b, &BucketTable::default()).unwrap();
        assert_eq!(r.matches.len(), 3);
    }

    #[test]
    fn latest_entry_selects_domain() {
        let mut b = BeliefState::new();
        b.set(Domain::Hotel, "price", "cheap");
        b.set(Domain::Restaurant, "food", "CHINESE");
        let db = toy();
        let latest = db.query(&b, &BucketTable::default()).unwrap();
        assert_eq!(latest.domain, Some(Domain::Restaurant));
        assert_eq!(latest.token, DbResult::One);
        let first = db
            .query_with(&b, &BucketTable::default(), DomainSelection::FirstEntry)
            .unwrap();
        assert_eq!(first.domain, Some(Domain::Hotel));
    }

    #[test]
    fn unknown_domain_is_reported() {
        let mut b = BeliefState::new();
        b.set(Domain::Police, "name", "x");
        assert!(matches!(
            toy().query(&b, &BucketTable::default()),
            Err(Error::UnknownDomain(_))
        ));
    }

    #[test]
    fn validation() {
        assert!(toy().validate().is_ok());
        let mut bad = toy();
        bad.tables.get_mut(&Domain::Hotel).unwrap().push(entity(&[("price", "cheap")]));
        assert!(bad.validate().is_err());
        let mut bad = toy();
        bad.tables.get_mut(&Domain::Hotel).unwrap()[0].insert("food".into(), "thai".into());
        assert!(bad.validate().is_err());
        let json = toy().to_json();
        assert_eq!(EntityDatabase::from_json(&json).unwrap(), toy());
    }
}
