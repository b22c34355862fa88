"""A tour of the extraction language.

Records are written as nested brackets: a spot group names an entity type and
its span, and association groups hang off it. Parsing is tolerant about
whitespace and the outer wrapper; linearizing always gives one canonical form.
"""

from urtf.sel import Schema, SelError, parse_sel, linearize_sel, tokenize_sel, validate_record

text = "Steve became CEO of Apple in 1997."
raw = "(person: Steve (work for: Apple)) (organization: Apple)"

record = parse_sel(raw)
print("parsed      :", record)
print("canonical   :", linearize_sel(record))
print("round trip  :", parse_sel(linearize_sel(record)) == record)
print("tokens      :", tokenize_sel(linearize_sel(record)))

# Parentheses and backslashes inside spans are escaped.
tricky = parse_sel(r"((title: Ghosts \(1987\)))")
print("escaped span:", repr(tricky.groups[0].info_span), "->", linearize_sel(tricky))

# Errors carry the byte offset where parsing went wrong.
for bad in ["((A x))", "((A: x)", "((A: x(B: y(C: z))))", "((: x))"]:
    try:
        parse_sel(bad)
    except SelError as exc:
        print(f"{bad!r:26} -> {type(exc).__name__} at byte {exc.position}")

# Validation checks names against a schema; it never raises.
schema = Schema(spots=frozenset({"person"}), assos=frozenset({"work for"}))
print("violations  :", validate_record(record, schema))
