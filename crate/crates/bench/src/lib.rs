//! Shared fixtures for the criterion benchmarks.

use streamctx::{
    ScheduledQuery, ScheduledResponse, SessionSchedule,
};

/// A five-minute session with a handful of queries and responses, matching
/// the shape of the serving benchmarks.
pub fn mixed_five_minute_schedule() -> SessionSchedule {
    SessionSchedule {
        duration_s: 300.0,
        queries: vec![
            ScheduledQuery { t: 25.0, text: "what is happening right now".into() },
            ScheduledQuery { t: 90.0, text: "tell me when the truck leaves".into() },
            ScheduledQuery { t: 210.0, text: "how many people are visible".into() },
        ],
        scripted_responses: vec![
            ScheduledResponse { t: 25.5, text: "a courier is scanning packages".into(), is_ack: false },
            ScheduledResponse { t: 90.5, text: "will do".into(), is_ack: true },
            ScheduledResponse { t: 143.0, text: "the truck just left the bay".into(), is_ack: false },
            ScheduledResponse { t: 210.5, text: "three people near the entrance".into(), is_ack: false },
        ],
    }
}
