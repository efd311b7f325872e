from . import data, evaluate, repro, runs, sample, train

# Registration order is the order subcommands appear in --help.
MODULES = (data, train, sample, evaluate, repro, runs)
