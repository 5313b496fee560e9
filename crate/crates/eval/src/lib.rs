//! Holds the `acceptance` test target, which prints one line per criterion.
//! Run it with `cargo test -p slide-eval --test acceptance`.
