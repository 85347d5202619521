//! Per-run call accounting: LLM completions by template, database queries,
//! and the extra attribution queries, tallied separately.

use super::templates::{TemplateId, ALL_TEMPLATES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Default)]
pub struct CallCounters {
    llm: [AtomicU64; 8],
    db_queries: AtomicU64,
    attribution_queries: AtomicU64,
}

impl CallCounters {
    pub fn new() -> CallCounters {
        CallCounters::default()
    }

    pub fn record_llm(&self, template: TemplateId) {
        let slot = ALL_TEMPLATES.iter().position(|t| *t == template).unwrap();
        self.llm[slot].fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_db_query(&self) {
        self.db_queries.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_attribution_query(&self) {
        self.attribution_queries.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        let mut llm_calls = BTreeMap::new();
        let mut total = 0;
        for (slot, template) in ALL_TEMPLATES.iter().enumerate() {
            let n = self.llm[slot].load(Ordering::Relaxed);
            total += n;
            if n > 0 {
                llm_calls.insert(template.as_str().to_string(), n);
            }
        }
        CounterSnapshot {
            llm_calls,
            llm_total: total,
            db_queries: self.db_queries.load(Ordering::Relaxed),
            attribution_queries: self.attribution_queries.load(Ordering::Relaxed),
        }
    }
}

/// An immutable view of the counters, stored per trace and summed per run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub llm_calls: BTreeMap<String, u64>,
    pub llm_total: u64,
    pub db_queries: u64,
    pub attribution_queries: u64,
}

impl CounterSnapshot {
    pub fn add(&mut self, other: &CounterSnapshot) {
        for (k, v) in &other.llm_calls {
            *self.llm_calls.entry(k.clone()).or_insert(0) += v;
        }
        self.llm_total += other.llm_total;
        self.db_queries += other.db_queries;
        self.attribution_queries += other.attribution_queries;
    }

    pub fn calls_for(&self, template: TemplateId) -> u64 {
        self.llm_calls.get(template.as_str()).copied().unwrap_or(0)
    }
}

/// Sums per-template LLM calls over many snapshots.
pub fn call_breakdown<'a, I>(snapshots: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a CounterSnapshot>,
{
    let mut total = CounterSnapshot::default();
    for s in snapshots {
        total.add(s);
    }
    total.llm_calls
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_totals_and_breakdown_agree() {
        let c = CallCounters::new();
        c.record_llm(TemplateId::PlanNextStep);
        c.record_llm(TemplateId::PlanNextStep);
        c.record_llm(TemplateId::StepToSql);
        c.record_db_query();
        c.record_attribution_query();
        let s = c.snapshot();
        assert_eq!(s.llm_total, 3);
        assert_eq!(s.calls_for(TemplateId::PlanNextStep), 2);
        assert_eq!(s.calls_for(TemplateId::StepToSql), 1);
        assert_eq!(s.calls_for(TemplateId::FallbackQa), 0);
        assert_eq!(s.db_queries, 1);
        assert_eq!(s.attribution_queries, 1);
        assert_eq!(s.llm_total, s.llm_calls.values().sum::<u64>());
    }

    #[test]
    fn breakdown_sums_across_snapshots() {
        let a = CallCounters::new();
        a.record_llm(TemplateId::PlanFull);
        let b = CallCounters::new();
        b.record_llm(TemplateId::PlanFull);
        b.record_llm(TemplateId::FallbackQa);
        let sa = a.snapshot();
        let sb = b.snapshot();
        let total = call_breakdown([&sa, &sb]);
        assert_eq!(total.get("plan_full"), Some(&2));
        assert_eq!(total.get("fallback_qa"), Some(&1));
    }
}
