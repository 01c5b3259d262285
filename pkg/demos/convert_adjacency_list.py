"""
Convert adjacency-list interaction files to user<TAB>item lines
===============================================================

Public copies of Yelp2018, Gowalla and Amazon-book usually ship as
``train.txt`` / ``test.txt`` with one line per user: ``user item item ...``.
``paac prepare`` reads one interaction per line, so merge and flatten them:

    python demos/convert_adjacency_list.py train.txt test.txt > yelp2018.tsv
"""

import sys

for path in sys.argv[1:]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            user, *items = line.split()
            for item in items:
                sys.stdout.write(f"{user}\t{item}\n")
