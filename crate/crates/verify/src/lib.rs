//! Holds the `acceptance` test target; run it with `cargo test -p segkit-verify`.
//!
//! It lives in its own workspace member, listed last, so its expected
//! failures do not stop the other test targets of a workspace run.
