//! Synthetic benchmark and preference-pair construction.

mod io;
mod preferences;
mod prompts;
mod split;

pub use io::{read_records, write_records};
pub use preferences::{build_record, gen_preferences, quantize_reward, Candidate, PreferenceRecord};
pub use prompts::{gen_prompts, read_prompts, write_prompts, Prompt};
pub use split::{assign_split, make_split, seq_identity, seq_identity_checked, SplitManifest};
