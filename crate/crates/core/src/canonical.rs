//! Canonical JSON: sorted object keys, no insignificant whitespace, integers
//! without leading zeros and reals in shortest round-trip form.
//!
//! `serde_json::Value` keeps objects in a `BTreeMap` (the `preserve_order`
//! feature must stay off), so going through a `Value` sorts keys at every
//! nesting level.

use serde::Serialize;

use crate::crypto::{sha256, Digest};

pub fn to_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("in-memory types always serialize")
}

pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    serde_json::to_vec(&to_value(value)).expect("json values always serialize")
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_vec(value)).expect("json output is utf-8")
}

pub fn digest<T: Serialize + ?Sized>(value: &T) -> Digest {
    sha256(&to_vec(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_at_every_level() {
        let v = json!({"b": 1, "a": {"z": true, "m": [3, {"y": 0, "x": 1}]}});
        assert_eq!(to_string(&v), r#"{"a":{"m":[3,{"x":1,"y":0}],"z":true},"b":1}"#);
    }

    #[test]
    fn reals_use_shortest_round_trip_form() {
        assert_eq!(to_string(&json!([0.1, 1.0, 3.0e-7, 1e21])), "[0.1,1.0,3e-7,1e+21]");
    }

    #[test]
    fn struct_field_order_does_not_matter() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: &'static str,
        }
        assert_eq!(to_string(&S { zeta: 7, alpha: "x" }), r#"{"alpha":"x","zeta":7}"#);
    }
}
