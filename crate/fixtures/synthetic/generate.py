"""Regenerates the synthetic fixture inputs (not the golden outputs).

    python3 generate.py
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).parent
rng = random.Random(20240611)

GRAPHS = {
    "chem": ("chemical entity", {
        "organic chemistry": ["alkene", "ester", "aldehyde", "benzene ring", "nucleophilic substitution",
                              "chiral center", "grignard reagent"],
        "inorganic chemistry": ["transition metal complex", "ligand field", "oxide mineral",
                                "noble gas compound", "coordination number", "crystal lattice", "metal carbonyl"],
        "electrochemistry": ["galvanic cell", "electrode potential", "electrolysis", "redox couple",
                             "salt bridge", "faradaic current", "corrosion rate"],
        "laboratory safety": ["fume hood", "spill kit"],
    }),
    "bio": ("biological process", {
        "cell biology": ["mitochondrion", "cell membrane", "ribosome", "golgi apparatus", "cytoskeleton",
                         "endoplasmic reticulum", "cell cycle"],
        "genetics": ["allele frequency", "gene expression", "point mutation", "chromosome crossover",
                     "dominant trait", "genetic drift", "transcription factor"],
        "immunology": ["antibody response", "t cell activation", "antigen presentation",
                       "cytokine signalling", "innate immunity", "vaccine adjuvant", "complement system"],
    }),
    "phys": ("physical phenomenon", {
        "thermodynamics": ["entropy change", "heat engine", "carnot cycle", "specific heat",
                           "adiabatic expansion", "phase transition", "free energy"],
        "optics": ["refractive index", "diffraction grating", "total internal reflection", "polarized light",
                   "thin lens", "optical fiber", "interference fringe"],
        "classical mechanics": ["angular momentum", "projectile motion", "simple harmonic motion",
                                "friction coefficient", "centripetal force", "elastic collision",
                                "moment of inertia"],
    }),
}

MODERATE = [u for _, (_, units) in GRAPHS.items() for u in units if u != "laboratory safety"]

STEMS = [
    "What happens to the {a} when the {b} is doubled in a controlled experiment",
    "Which statement best describes how a {a} affects the {b}",
    "In a typical undergraduate problem, how is the {a} related to the {b}",
    "Why does the {a} change when conditions favour the {b}",
    "Explain the role of the {a} in determining the {b}",
    "How would you estimate the {a} given a measured {b}",
]
SINGLE = [
    "What is the main effect of the {a} in a standard laboratory setting",
    "Which factor most strongly controls the {a}",
    "How is the {a} usually measured in practice",
    "Describe the key property that characterizes the {a}",
]
ANSWERS = [
    "It increases in proportion to the applied change",
    "It decreases because the competing pathway dominates",
    "It stays constant since the system is already at equilibrium",
    "It follows a linear trend at small perturbations",
    "Because the energy barrier is lowered",
    "Through a calibrated reference measurement",
    "Its sign reverses when the direction of the change is reversed",
    "Mostly through temperature and composition",
]
NON_SCI = [
    "What time does the public library open on Sunday",
    "Recommend a good novel for a long train journey",
    "How do I reset the password on my email account",
    "Which day of the week is best for grocery shopping",
    "Suggest a name for a small coffee shop",
    "How many people can sit at a standard dining table",
    "What should I pack for a weekend hiking trip",
    "Give me tips for writing a polite complaint letter",
    "How long should pasta be boiled",
    "What is a good way to organize a bookshelf",
]


def write_ontology():
    d = HERE / "ontology"
    d.mkdir(exist_ok=True)
    for gid, (root, units) in GRAPHS.items():
        lines = [f"# {gid} ontology", f"{gid.upper()}:0000\t{root}\t"]
        n = 1
        for unit, leaves in units.items():
            uid = f"{gid.upper()}:{n:04d}"
            n += 1
            lines.append(f"{uid}\t{unit}\t{gid.upper()}:0000")
            for leaf in leaves:
                lines.append(f"{gid.upper()}:{n:04d}\t{leaf}\t{uid}")
                n += 1
        (d / f"{gid}.tsv").write_text("\n".join(lines) + "\n")


def keywords(unit):
    for _, (_, units) in GRAPHS.items():
        if unit in units:
            return units[unit]
    raise KeyError(unit)


def graph_of(unit):
    return next(g for g, (_, units) in GRAPHS.items() if unit in units)


def write_corpus():
    rows = []
    i = 0
    for unit in MODERATE:
        for j in range(20):
            kws = keywords(unit)
            if j % 4 == 3:
                other = rng.choice([u for u in MODERATE if graph_of(u) != graph_of(unit)])
                a, b = rng.choice(kws), rng.choice(keywords(other))
                q = rng.choice(STEMS).format(a=a, b=b)
            elif j % 4 == 2:
                a, b = rng.sample(kws, 2)
                q = rng.choice(STEMS).format(a=a, b=b)
            else:
                q = rng.choice(SINGLE).format(a=rng.choice(kws))
            rows.append({"id": f"q{i:04d}", "query": q + "?", "answer": rng.choice(ANSWERS),
                         "source": f"synthetic-{graph_of(unit)}"})
            i += 1
    for k in range(20):
        q = NON_SCI[k % len(NON_SCI)] + ("?" if k < 10 else " this month?")
        rows.append({"id": f"q{i:04d}", "query": q, "answer": "It depends on local circumstances",
                     "source": "synthetic-general"})
        i += 1
    rng.shuffle(rows)
    # one exact duplicate and one malformed-free duplicate id check target
    rows.append(dict(rows[0], id="q9000"))
    (HERE / "corpus.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    gold = []
    for r in rows[:40]:
        names = sorted({u for u in MODERATE for kw in keywords(u) if kw in r["query"]}) or ["Non-Scientific"]
        gold.append({"id": r["id"], "query": r["query"], "gold": names})
    (HERE / "tagger_gold.jsonl").write_text("".join(json.dumps(g) + "\n" for g in gold))


def write_oracles():
    d = HERE / "oracles"
    d.mkdir(exist_ok=True)
    roots = "|".join(root for root, _ in GRAPHS.values())
    mods = "|".join(MODERATE)
    (d / "classifier.tsv").write_text(
        "# granularity labels\n"
        f"~term: (?:{roots})\\.\t(too coarse); Explanation: spans several subfields.\n"
        f"~term: (?:{mods})\\.\t(moderate); Explanation: a textbook chapter.\n"
        "~term: \t(too fine); Explanation: too narrow.\n")
    orders = {
        "ranker-a": ["organic chemistry", "electrochemistry", "inorganic chemistry", "thermodynamics"],
        "ranker-b": ["organic chemistry", "inorganic chemistry", "electrochemistry"],
        "ranker-c": ["electrochemistry", "organic chemistry", "thermodynamics", "inorganic chemistry"],
    }
    immuno = ["immunology", "cell biology", "genetics"]
    for name, order in orders.items():
        (d / f"{name}.tsv").write_text(
            f"# {name}\n"
            "~Benchmark Description: [^\\n]*(?i:organic)\t" + "\\n".join(order) + "\n"
            "~Benchmark Description: [^\\n]*(?i:immun)\t" + "\\n".join(immuno if name != "ranker-c" else immuno[::-1]) + "\n"
            "~Benchmark Description: \tthermodynamics\\noptics\\nclassical mechanics\n")
    organic = "|".join(keywords("organic chemistry"))
    immune = "|".join(keywords("immunology"))
    for name, extra in [("judge-a", ""), ("judge-b", ""), ("judge-c", "|electrode potential|galvanic cell")]:
        (d / f"{name}.tsv").write_text(
            f"# {name}\n"
            f"~Benchmark requirement: [^\\n]*(?i:organic)(?s:.*)Question: [^\\n]*(?:{organic}{extra})\tyes, it concerns organic chemistry.\n"
            f"~Benchmark requirement: [^\\n]*(?i:immun)(?s:.*)Question: [^\\n]*(?:{immune})\tyes\n"
            "~Benchmark requirement: \tno, outside the requirement.\n")
    distractors = ["Only at very high pressure", "Only in the gas phase", "Only when a catalyst is present"]
    opts = "\\\\n".join(f"{l}. {t}" for l, t in zip("ABCD", ["$a"] + distractors))
    dup = "\\\\n".join(f"{l}. {t}" for l, t in zip("ABCD", ["$a", "$a"] + distractors[:2]))
    (d / "generator.tsv").write_text(
        "# mcq conversion and synthetic queries\n"
        "~Raw problem: Question: [^\\n]*estimate the chiral center\tI am unable to convert this item.\n"
        f"~Raw problem: Question: (?P<q>[^\\n]*grignard reagent[^\\n]*)\\nAnswer: (?P<a>[^\\n]*)\t"
        f'{{"query": "$q\\\\n{dup}", "answer": "A"}}\n'
        f"~Raw problem: Question: (?P<q>[^\\n]*)\\nAnswer: (?P<a>[^\\n]*)\t"
        f'Here is the item: {{"query": "$q\\\\n{opts}", "answer": "A"}}\n'
        "~keywords: (?P<k>[^\\n]*?)\\. Do not introduce(?s:.*)long and complex\tIn a detailed setting, "
        "how would a researcher connect $k when designing a multi-stage study with several controls?\n"
        "~keywords: (?P<k>[^\\n]*?)\\. Do not introduce\tWhat is the link between $k?\n")
    models = {
        "model-strong": "~(?m)^(?P<l>[A-E])\\. [^O]\t$l\n",
        "model-mid": "~(?ms)(?:alkene|benzene ring)[^\\n]*$.*?^(?P<l>[A-E])\\. [^O]\t$l\n~.\tB\n",
        "model-weak": "~.\tThe answer is A.\n",
        "model-silent": "~.\tI would rather not guess.\n",
    }
    for name, text in models.items():
        (d / f"{name}.tsv").write_text(f"# {name}\n" + text)
    (HERE / "reference_accuracy.tsv").write_text(
        "# model\taccuracy\nmodel-strong\t0.91\nmodel-mid\t0.58\nmodel-weak\t0.31\nmodel-silent\t0.02\n")


write_ontology()
write_corpus()
write_oracles()
(HERE / "exclusions.tsv").write_text("# held-out items\nid\tq0005\ntext\tHow long should pasta be boiled?\n")
