//! Surface vocabulary used to render synthetic item texts and queries.

/// Words that signal a function in item texts.
pub fn function_cues(function: &str) -> &'static [&'static str] {
    match function {
        "buy" => &["buy", "shop", "purchase", "mall"],
        "order" => &["order", "delivery", "menu"],
        "take" => &["ride", "trip", "hailing"],
        "rent" => &["rent", "rental", "lease"],
        "renovate" => &["renovation", "decor", "remodel"],
        "pay" => &["pay", "payment", "billing"],
        "book" => &["book", "booking", "reserve"],
        "recharge" => &["recharge", "topup", "refill"],
        "repair" => &["repair", "fix", "maintenance"],
        "sell" => &["sell", "resale", "tradein"],
        _ => &[],
    }
}

/// Brand-like and descriptive words that signal a product.
pub fn product_cues(product: &str) -> &'static [&'static str] {
    match product {
        "bike" => &["bicycle", "cycling", "hellobike"],
        "car" => &["auto", "garage", "sedan"],
        "coffee" => &["starbucks", "latte", "espresso"],
        "coffee bean" => &["arabica", "roast", "grinder"],
        "electricity bill" => &["power", "utility", "kwh"],
        "flower" => &["florist", "bouquet", "roses"],
        "food" => &["grocery", "fresh", "pantry"],
        "hotel room" => &["hotel", "inn", "suite"],
        "house" => &["apartment", "realty", "housing"],
        "internet taxi" => &["didi", "cab", "taxi"],
        "iphone13" => &["apple", "iphone", "ios"],
        "medicine" => &["pharmacy", "drugstore", "pills"],
        "mobile phone" => &["smartphone", "handset", "android"],
        "movie ticket" => &["cinema", "film", "imax"],
        "phone credit" => &["prepaid", "carrier", "dataplan"],
        "restaurant" => &["dining", "bistro", "tablefor"],
        "snack" => &["popcorn", "chips", "candy"],
        "takeout" => &["meituan", "lunchbox", "eleme"],
        "ticket" => &["ticketing", "admission", "pass"],
        "train ticket" => &["railway", "rail", "highspeed"],
        "vehicle" => &["motor", "fleet", "vans"],
        _ => &[],
    }
}

pub const NOISE: &[&str] = &[
    "official", "deals", "online", "center", "plus", "express", "club", "hub", "daily", "city", "vip", "smart",
];

pub const QUERY_NOISE: &[&str] = &["where", "how", "cheap", "fast", "nearby", "best", "now", "please"];
