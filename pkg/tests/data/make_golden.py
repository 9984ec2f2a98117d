"""Regenerate the normalization golden fixture.

The *raw* document is assembled from explicit Arabic-presentation
codepoints (U+064A yeh, U+0643 kaf, arabic-indic digits, kasra,
tatweel) plus messy whitespace, boilerplate head lines, short lines
and a non-Persian line.  The *expected* document is written out by
hand with the Persian codepoints and the surviving lines only -- it
is NOT produced by running the normalizer, so the golden test stays
an independent oracle.

Run from the repo root:

    python3 tests/data/make_golden.py
"""

import json
import pathlib

HERE = pathlib.Path(__file__).parent

ZWNJ = "‌"

# ---------------------------------------------------------------- raw input

# line 0: 2 tokens of page furniture (before the section marker -> dropped)
L0 = "صفحه  اول"  # "صفحه  اول", double space
# line 1: author credit with arabic yeh and a double space (dropped: pre-marker)
L1 = "نويسنده:  تست"
# line 2: whitespace only (dropped by line cleanup)
L2 = "   "
# line 3: the marker line ("مقدمه") -- 14 tokens, has arabic yeh + ZWNJ word
L3 = (
    "مقدمه: اين مقاله"
    " به بررسی روش های"
    " خلاصه سازی متن"
    " های بلند فارسی"
    " می" + ZWNJ + "پردازد"
)
# line 4: 16 tokens; arabic-indic digits, a kasra, arabic yeh, tatweel
L4 = (
    "در سال ٢٠٢٤"
    " پژوهشگران"
    " زِيادی به اين"
    " حوزه وارد شدند"
    " و نتايـج خوبی"
    " به دست آوردند"
)
# line 5: 3 tokens -> dropped by the short-line rule
L5 = "اين روش ها"
# line 6: 18 tokens, arabic yeh + arabic kaf everywhere
L6 = (
    "مدل هاي جديد با"
    " توجه به ساختار"
    " متن هاي طولاني"
    " نتايج بهتري"
    " درباره خلاصه"
    " سازي ارائه مي"
    " كنند"
)
# line 7: 9-token english line -> dropped (strictly fewer than 10 tokens)
L7 = "this is an english line that should not matter"
# line 8: 18 tokens, arabic kaf + yeh
L8 = (
    "كتاب هاي درسي"
    " فارسي با رسم"
    " الخط درست"
    " نوشته مي شوند و"
    " خوانندگان از"
    " آنها بهره مي"
    " برند"
)
# line 9: 1 token -> dropped
L9 = "پايان"

RAW_BODY = (
    L0 + "\n" + L1 + "\n" + L2 + "\n" + L3 + "\r\n" + L4 + "\n"
    + L5 + "\n" + L6 + "\n" + L7 + "\n" + L8 + "\n" + L9
)

# summary: double space, arabic yeh word, arabic kaf word
RAW_SUMMARY = (
    "خلاصه  اي"
    " كوتاه درباره"
    " مقاله"
)

RAW = {
    "id": "composite-1",
    "title": "نمونه",
    "category": "علم",
    "body": RAW_BODY,
    "summary": RAW_SUMMARY,
}

# ------------------------------------------------------------ expected output
#
# Hand-applied pipeline: character mapping (yeh/kaf unified, arabic-indic
# digits -> extended digits, kasra and tatweel removed), whitespace collapse,
# blank-line drop, everything above the first "مقدمه" line removed, lines with
# fewer than 10 whitespace tokens removed.  Survivors: L3, L4, L6, L8.

E3 = (
    "مقدمه: این مقاله"
    " به بررسی روش های"
    " خلاصه سازی متن"
    " های بلند فارسی"
    " می" + ZWNJ + "پردازد"
)
E4 = (
    "در سال ۲۰۲۴"
    " پژوهشگران"
    " زیادی به این"
    " حوزه وارد شدند"
    " و نتایج خوبی"
    " به دست آوردند"
)
E6 = (
    "مدل های جدید با"
    " توجه به ساختار"
    " متن های طولانی"
    " نتایج بهتری"
    " درباره خلاصه"
    " سازی ارائه می"
    " کنند"
)
E8 = (
    "کتاب های درسی"
    " فارسی با رسم"
    " الخط درست"
    " نوشته می شوند و"
    " خوانندگان از"
    " آنها بهره می"
    " برند"
)

EXPECTED = {
    "id": "composite-1",
    "title": "نمونه",
    "category": "علم",
    "body": E3 + "\n" + E4 + "\n" + E6 + "\n" + E8,
    "summary": (
        "خلاصه ای"
        " کوتاه درباره"
        " مقاله"
    ),
}


def dump(obj, path):
    text = json.dumps(obj, ensure_ascii=True, sort_keys=True, indent=2) + "\n"
    path.write_bytes(text.encode("utf-8"))


def main():
    # sanity: the raw side must contain the presentation codepoints, the
    # expected side must not.
    for ch in ("ي", "ك", "ِ", "ـ", "٢"):
        assert ch in RAW["body"]
        assert ch not in EXPECTED["body"]
    assert ZWNJ in EXPECTED["body"]
    for line in EXPECTED["body"].split("\n"):
        assert len(line.split()) >= 10, line
    dump(RAW, HERE / "composite_raw.json")
    dump(EXPECTED, HERE / "composite_golden.json")
    print("wrote composite_raw.json / composite_golden.json")


if __name__ == "__main__":
    main()
