//! Recovery toolkit: domino-byte arithmetic and key combination, noise
//! filtering, AES key extraction, keyword/URL matching, and targeted
//! frequency-difference leakage.

mod aes;
mod key;
mod targeted;
mod url;

pub use aes::{recover_aes, window_purity, AesReport, AesVictim};
pub use key::{
    combine_key, domino, sliding_window_filter, DominoByte, KeyHypothesis, WindowFilterMode,
    WindowFiltered, SMOOTH_EPSILON,
};
pub use targeted::{
    detect_byte, targeted_leak, FrequencyDelta, LeakMode, TargetedReport, DEFAULT_EXCLUDED,
    DETECTION_SIGMA,
};
pub use url::{match_keywords, recover_url, KeywordMatch, UrlRecovery, DEFAULT_TLDS};
