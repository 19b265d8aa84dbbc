//! Holds the `acceptance` test target; run it with
//! `cargo test -p kq-verify --test acceptance`.
