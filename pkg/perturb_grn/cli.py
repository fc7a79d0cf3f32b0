# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

import argparse
import logging
import sys
from pathlib import Path

from . import service
from .config import Ablation
from .run_spec import RunSpec

logger = logging.getLogger(__name__)

SIMULATION_FLAGS = (
    'n_perturbed',
    'n_extended',
    'n_measured',
    'n_cells',
    'edge_density',
    'knockdown_strength',
    'artifact_rate',
)
TRAIN_FLAGS = (
    'epochs',
    'batch_size',
    'learning_rate',
    'latent_dim',
    'k_hops',
    'alpha',
    'beta',
    'mask_prior',
    'ablation',
    'holdout',
)
EVAL_FLAGS = (
    'n_particles',
    'threshold',
    'restrict',
    'n_negatives',
    'k_top',
)


def _gene_list(value: str) -> tuple[str, ...]:
    return tuple(g.strip() for g in value.split(',') if g.strip())


def _common_parser() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    common = argparse.ArgumentParser(add_help=False)

    run_group = common.add_argument_group('Run Options')
    run_group.add_argument(
        '--config',
        type=Path,
        metavar='CONFIG_FILE',
        default=None,
        help=(
            'JSON config with optional "simulation", "train" and "eval" sections. '
            'Each section present must name every field.'
        ),
    )
    run_group.add_argument(
        '--seed',
        type=int,
        default=None,
        help='Seed overriding the seed of every config section.',
    )
    run_group.add_argument(
        '--out',
        type=Path,
        metavar='DIR',
        default=None,
        help='Output directory (defaults to runs/<command>).',
    )

    # Logging and Debugging
    logging_group = common.add_argument_group('Logging and Debugging Options')
    logging_exclusive = logging_group.add_mutually_exclusive_group()
    logging_exclusive.add_argument(
        '-d',
        '--debug',
        help='Enable debug logging (shows detailed execution and tracebacks).',
        action='store_const',
        dest='loglevel',
        const=logging.DEBUG,
    )
    logging_exclusive.add_argument(
        '-v',
        '--verbose',
        help='Enable verbose logging (shows INFO level messages).',
        action='store_const',
        dest='loglevel',
        const=logging.INFO,
    )
    common.set_defaults(loglevel=logging.WARNING)
    return common


def _add_data(parser, required: bool = True):
    parser.add_argument(
        '--data',
        type=Path,
        dest='data_dir',
        metavar='DATA_DIR',
        required=required,
        help='Directory with expression.tsv, treatments.tsv, qc.tsv and catalog.tsv.',
    )


def _add_checkpoint(parser, required: bool = True):
    parser.add_argument(
        '--checkpoint',
        type=Path,
        metavar='CKPT',
        required=required,
        help='Checkpoint written by the train command.',
    )


def _add_train_flags(parser):
    group = parser.add_argument_group('Training Options')
    group.add_argument('--epochs', type=int, default=None)
    group.add_argument('--batch-size', type=int, default=None)
    group.add_argument('--learning-rate', type=float, default=None)
    group.add_argument('--latent-dim', type=int, default=None)
    group.add_argument(
        '--k-hops', type=int, default=None, help='Hops accumulated by the DGE loss.'
    )
    group.add_argument(
        '--alpha', type=float, default=None, help='Weight of the artifact KL term.'
    )
    group.add_argument(
        '--beta-gpo',
        type=float,
        dest='beta',
        default=None,
        help='Weight of the graph prior objective.',
    )
    group.add_argument('--mask-prior', type=float, default=None)
    group.add_argument(
        '--ablation',
        choices=[a.value for a in Ablation],
        default=None,
        help='Graph-prior loss components to keep.',
    )
    group.add_argument(
        '--holdout',
        type=_gene_list,
        metavar='GENE[,GENE...]',
        default=None,
        help='Perturbed genes whose treated rows all go to the test split.',
    )


def _add_eval_flags(parser):
    group = parser.add_argument_group('Evaluation Options')
    group.add_argument('--particles', type=int, dest='n_particles', default=None)
    group.add_argument('--threshold', type=float, default=None)
    group.add_argument('--restrict', choices=['all', 'perturbed_only'], default=None)
    group.add_argument('--n-negatives', type=int, default=None)
    group.add_argument('--k-top', type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog='pgrn',
        description=(
            'Learn gene regulatory networks from perturbation single-cell data '
            'with a causally structured variational autoencoder.'
        ),
        epilog=(
            'Examples:\n'
            '  %(prog)s simulate --out data -v\n'
            '  %(prog)s train --data data --epochs 200 --out run\n'
            '  %(prog)s grn --checkpoint run/model.ckpt --out grn\n'
            '  %(prog)s eval --data data --checkpoint run/model.ckpt '
            '--truth data/ground_truth.tsv\n'
            '  %(prog)s ablate --data data --epochs 100 --out ablation'
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser(
        'simulate', parents=[common], help='Write a synthetic dataset.'
    )
    group = simulate.add_argument_group('Simulation Options')
    group.add_argument('--n-perturbed', type=int, default=None)
    group.add_argument('--n-extended', type=int, default=None)
    group.add_argument('--n-measured', type=int, default=None)
    group.add_argument('--n-cells', type=int, default=None)
    group.add_argument('--edge-density', type=float, default=None)
    group.add_argument('--knockdown-strength', type=float, default=None)
    group.add_argument('--artifact-rate', type=float, default=None)

    train = commands.add_parser('train', parents=[common], help='Train a model.')
    _add_data(train)
    _add_train_flags(train)

    predict = commands.add_parser(
        'predict', parents=[common], help='Predict responses to held-out treatments.'
    )
    _add_data(predict)
    _add_checkpoint(predict)
    predict.add_argument(
        '--gene',
        action='append',
        dest='genes',
        default=[],
        help='Treatment to predict (repeatable).',
    )
    _add_eval_flags(predict)

    grn = commands.add_parser('grn', parents=[common], help='Extract the GRN.')
    _add_checkpoint(grn)
    _add_eval_flags(grn)

    evaluate = commands.add_parser(
        'eval', parents=[common], help='Score a model and a graph.'
    )
    _add_data(evaluate)
    _add_checkpoint(evaluate, required=False)
    evaluate.add_argument(
        '--graph', type=Path, default=None, help='Edge list to score instead.'
    )
    evaluate.add_argument(
        '--truth',
        type=Path,
        default=None,
        help='Ground-truth edge list; adds edge AUROC to the report.',
    )
    _add_eval_flags(evaluate)

    ablate = commands.add_parser(
        'ablate', parents=[common], help='Compare the graph-prior ablation variants.'
    )
    _add_data(ablate)
    _add_train_flags(ablate)
    _add_eval_flags(ablate)
    return parser


def parse_args(argv=None):
    """Defines and parses command-line arguments."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.config is not None and not args.config.is_file():
        parser.error(f'Config file not found: {args.config}')
    data_dir = getattr(args, 'data_dir', None)
    if data_dir is not None and not data_dir.is_dir():
        parser.error(f'Dataset directory not found: {data_dir}')
    checkpoint = getattr(args, 'checkpoint', None)
    if checkpoint is not None and not checkpoint.is_file():
        parser.error(f'Checkpoint not found: {checkpoint}')
    return args


def _overrides(args, names) -> dict:
    return {name: getattr(args, name, None) for name in names}


def build_spec(args) -> RunSpec:
    return RunSpec(
        _command=args.command,
        _out_dir=args.out or Path('runs') / args.command,
        _config_path=args.config,
        _data_dir=getattr(args, 'data_dir', None),
        _checkpoint=getattr(args, 'checkpoint', None),
        _seed=args.seed,
        _overrides={
            'simulation': _overrides(args, SIMULATION_FLAGS),
            'train': _overrides(args, TRAIN_FLAGS),
            'eval': _overrides(args, EVAL_FLAGS),
        },
    )


def run_command(args, spec: RunSpec):
    if args.command == 'simulate':
        service.run_simulate(spec)
    elif args.command == 'train':
        service.run_train(spec)
    elif args.command == 'predict':
        service.run_predict(spec, genes=args.genes)
    elif args.command == 'grn':
        service.run_grn(spec)
    elif args.command == 'eval':
        service.run_eval(spec, graph_path=args.graph, truth_path=args.truth)
    elif args.command == 'ablate':
        service.run_ablate(spec)


def cli_entrypoint(argv=None):
    """The main entry point function for the CLI."""
    args = parse_args(argv)

    # Configure logging based on CLI arguments
    logging.basicConfig(
        level=args.loglevel,
        format='{asctime} - {levelname} :\t{message}',
        style='{',
        datefmt='%Y-%m-%d %H:%M',
    )

    logger.debug('Starting CLI execution...')
    spec = build_spec(args)
    logger.info(f'🧬 Command: {spec.command}')
    logger.info(f'📁 Output: {spec.out_dir}')
    if spec.config_path:
        logger.info(f'📋 Config: {spec.config_path}')

    try:
        run_command(args, spec)
        logger.info(f'✅ {spec.command} completed successfully!')
        sys.exit(0)
    except FileNotFoundError as e:
        logger.error(f'❌ File not found: {e}')
        logger.debug('Full traceback:', exc_info=True)
        sys.exit(1)
    except ValueError as e:
        logger.error(f'❌ Invalid input: {e}')
        logger.debug('Full traceback:', exc_info=True)
        sys.exit(1)
    except RuntimeError as e:
        logger.error(f'❌ Run failed: {e}')
        logger.debug('Full traceback:', exc_info=True)
        sys.exit(2)
    except KeyboardInterrupt:
        logger.warning('⚠️  Run cancelled by user')
        sys.exit(130)
    except Exception as e:
        logger.error(f'❌ {spec.command} failed: {e}')
        logger.debug('Full traceback:', exc_info=True)
        sys.exit(1)
