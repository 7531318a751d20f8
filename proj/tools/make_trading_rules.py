#!/usr/bin/env python3
"""Writes the scripted rules for the trading fixture (tests/fixtures/trading/rules.json)."""
import json
import pathlib

GOLD = {q["question_id"]: q["SQL"] for q in json.loads(
    (pathlib.Path(__file__).resolve().parent.parent / "tests/fixtures/trading/questions.json").read_text())}

PHRASE = {
    1: "Equities desk",
    2: "momentum strategy",
    3: "EUR accounts",
    4: "For each desk",
    5: "AAPL on 2024-01-05",
    6: "last trading day",
    7: "mean reversion",
    8: "Alice Chen",
}


def q(n):
    return r"Question: [^\n]*" + PHRASE[n]


def sql(s):
    return f"<sql>\n{s}\n</sql>"


def action(name, why):
    return f"<action>{name}</action> {why}"


rules = []


def add(tag, match, *responses, cycle=False):
    rule = {"tag": tag, "match": match}
    if len(responses) == 1:
        rule["response"] = responses[0]
    else:
        rule["responses"] = list(responses)
    if cycle:
        rule["cycle"] = True
    rules.append(rule)


# Refinement
add("refine.describe_series", None,
    "Daily end-of-day price snapshots, one table per trading day named daily_prices_YYYYMMDD "
    "(2024-01-02 to 2024-01-30). The earliest tables have no implied_vol column.")
add("refine.knowledge", None,
    "Quantity: shares (equities, ETFs), contracts (futures), base units (FX). Prices in trading "
    "currency. Notional = quantity * price. Strategy names are upper case with a version suffix. "
    "One price row per instrument per day.")

# Selection: each sample drafts the gold query, which names the relevant tables.
for n in PHRASE:
    add("select.*", q(n), sql(GOLD[n]))

# Alignment probes; questions without a rule get a probe outside the selection, which is dropped.
add("align.probes", q(2), sql("SELECT DISTINCT name FROM strategies"))
add("align.probes", q(3), sql("SELECT DISTINCT currency FROM accounts"))
add("align.probes", q(8), sql("SELECT name, desk FROM traders LIMIT 5"))
add("align.probes", None, sql("SELECT COUNT(*) FROM sqlite_master"))
add("align.summary", q(2), "Strategy names are stored upper case with a version suffix, for example MOMENTUM_V2.")
add("align.summary", q(3), "Account currencies are three-letter ISO codes: USD, EUR, GBP, CHF.")
add("align.summary", q(8), "Trader names are stored as 'First Last' with capitalized words.")
add("align.summary", None, "No unusual value formats.")

# Generation.
momentum_guess = ("SELECT SUM(t.quantity) FROM trades t JOIN strategies s ON t.strategy_id = s.strategy_id "
                  "WHERE s.name = 'momentum'")
eur_guess = ("SELECT DISTINCT i.symbol FROM trades t JOIN accounts a ON t.account_id = a.account_id "
             "JOIN instruments i ON t.instrument_id = i.instrument_id WHERE a.ccy = 'EUR' ORDER BY i.symbol")
desk_qty = ("SELECT tr.desk, SUM(t.quantity) FROM trades t JOIN accounts a ON t.account_id = a.account_id "
            "JOIN traders tr ON a.trader_id = tr.trader_id GROUP BY tr.desk")
alice_guess = ("SELECT AVG(t.price) FROM trades t JOIN accounts a ON t.account_id = a.account_id "
               "JOIN traders tr ON a.trader_id = tr.trader_id WHERE tr.name = 'alice chen'")
jan31_guess = ("SELECT i.symbol FROM daily_prices_20240131 p JOIN instruments i ON "
               "p.instrument_id = i.instrument_id ORDER BY p.close_price DESC LIMIT 1")
typo_final = GOLD[7].replace("SELECT", "SELEC", 1)

initial = {1: GOLD[1], 2: momentum_guess, 3: eur_guess, 4: desk_qty, 5: GOLD[5], 6: jan31_guess,
           7: GOLD[7], 8: alice_guess}
for n, s in initial.items():
    add("evolve.initial", q(n), sql(s))

# Later-step action rules come first so the first match reflects the history.
add("evolve.action", q(2) + r"[\s\S]*Step 2 \(EXPLORE\)", action("FINALIZE", "The stored name is MOMENTUM_V2."))
add("evolve.action", q(2), action("EXPLORE", "The sum is NULL, so the name filter matched nothing."))
add("evolve.action", q(3) + r"[\s\S]*Step 2 \(REVISE\)", action("FINALIZE", "The symbols look right."))
add("evolve.action", q(3), action("REVISE", "The column is called currency, not ccy."))
add("evolve.action", q(4) + r"[\s\S]*Step 2 \(EXTEND\)", action("FINALIZE", "Notional per desk computed."))
add("evolve.action", q(4), action("EXTEND", "Quantities per desk are right; multiply by price."))
add("evolve.action", q(6) + r"[\s\S]*Step 2 \(EXPLORE\)", action("FINALIZE", "The last table is 20240130."))
add("evolve.action", q(6), action("EXPLORE", "That table does not exist; list the daily tables."))
add("evolve.action", q(8) + r"[\s\S]*Step 2 \(REVISE\)", action("FINALIZE", "The average is plausible."))
add("evolve.action", q(8), action("REVISE", "No rows matched; names are capitalized."))
add("evolve.action", None, action("FINALIZE", "The result answers the question."))

add("evolve.next.explore", q(2), sql("SELECT DISTINCT name FROM strategies"))
add("evolve.next.explore", q(6), sql("SELECT name FROM sqlite_master WHERE type = 'table' AND name LIKE "
                                    "'daily_prices%' ORDER BY name DESC"))
add("evolve.next.revise", q(3), sql(GOLD[3]))
add("evolve.next.revise", q(8), sql(GOLD[8]))
add("evolve.next.extend", q(4), sql(GOLD[4]))

for n in PHRASE:
    add("evolve.final", q(n), sql(typo_final if n == 7 else GOLD[n]))
add("evolve.correct", r"SELEC COUNT", sql(GOLD[7]))
add("evolve.divide_and_conquer", None, "<sql>\nSELECT 1\n</sql>")

out = pathlib.Path(__file__).resolve().parent.parent / "tests/fixtures/trading/rules.json"
out.write_text(json.dumps({"rules": rules}, indent=2) + "\n")
