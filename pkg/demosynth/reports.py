"""This module contains methods for writing evaluation, ablation, trace and
vocabulary reports as JSON, CSV or plain text.
"""
import csv
import json

from .evaluation import ABLATION_COLUMNS, EntryResult
from .world import PERCEPT_NAMES

#: These fields of an EvalReport are repeated on every detail row
REPORT_BASIC_FIELDS = ['mode', 'epsilon']

#: Define the attributes to include in per-entry reports
REPORT_FIELDS = {
    EntryResult: (
        'index',
        'noise_seed',
        'exact',
        'alias',
        'parse_failure',
        'behavioral',
        'truth',
        'predicted',
    ),
}

#: Columns of a run-program trace
TRACE_FIELDS = ('step', 'percepts', 'action', 'action_name')


def explode_report_fields():
    "Returns a list of fields reported by explode_report"
    return tuple(REPORT_BASIC_FIELDS) + REPORT_FIELDS[EntryResult]


def get_obj_fields(obj):
    """Given a supported reporting object type, get relevant fields and return
    as a dictionary of field-value pairs"""
    output = dict()
    for key in REPORT_FIELDS[obj.__class__]:
        output[key] = getattr(obj, key)
    return output


def explode_report(report):
    """Given an EvalReport, break it down into one dictionary per evaluated
    entry. Every row carries the report's decoding mode and the row's noise
    level so rows from several reports can be concatenated."""
    basics = {'mode': report.summary()['mode']}
    for result in report.results:
        yield {**basics, 'epsilon': result.epsilon, **get_obj_fields(result)}


def write_report_json(handle, report):
    "Output the report summary as JSON"
    json.dump(report.summary(), handle, indent=4, sort_keys=True, default=str)
    handle.write('\n')


def write_details_csv(handle, report):
    "Output the per-entry verdicts of a report as CSV data"
    writer = csv.DictWriter(
        handle, dialect='excel', fieldnames=explode_report_fields())
    writer.writeheader()
    for row in explode_report(report):
        try:
            writer.writerow(row)
        except Exception as err:
            raise RuntimeError((
                "fatal exception while writing entry "
                f"{row.get('index')}: {err}"))


def ablation_records(table):
    "Returns the ablation table as a list of dictionaries"
    return [{column: _plain(value) for column, value in record.items()}
            for record in table[ABLATION_COLUMNS].to_dict(orient='records')]


def _plain(value):
    "Converts numpy scalars to Python numbers for JSON output"
    return value.item() if hasattr(value, 'item') else value


def write_ablation_json(handle, table, reports=(), config_hash=None,
                        data_hash=None):
    """Output the ablation table, plus each underlying report summary, as
    JSON. The config and dataset hashes are recorded alongside."""
    output = {
        'config_hash': config_hash,
        'data_hash': data_hash,
        'table': ablation_records(table),
        'runs': [{'epsilon': epsilon, 'seed': seed, **report.summary()}
                 for epsilon, seed, report in reports],
    }
    json.dump(output, handle, indent=4, sort_keys=True, default=str)
    handle.write('\n')


def write_ablation_csv(handle, table):
    "Output the ablation table as CSV data"
    writer = csv.DictWriter(handle, dialect='excel',
                            fieldnames=ABLATION_COLUMNS)
    writer.writeheader()
    for record in ablation_records(table):
        writer.writerow(record)


def format_ablation_table(table, digits=4):
    """Returns the ablation table as aligned text, one row per noise level:
    mean accuracy with the [min, max] range over seeds"""
    def cell(row, name):
        return (f"{row[name + '_mean']:.{digits}f} "
                f"[{row[name + '_min']:.{digits}f}, "
                f"{row[name + '_max']:.{digits}f}]")

    header = ('epsilon', 'perception', 'seeds', 'exact', 'alias')
    lines = []
    for _, row in table.iterrows():
        lines.append((f"{row['epsilon']:.2f}",
                      f"{row['perception_accuracy']:.2f}",
                      str(int(row['seeds'])), cell(row, 'exact'),
                      cell(row, 'alias')))
    widths = [max(len(item[i]) for item in [header] + lines)
              for i in range(len(header))]
    output = []
    for item in [header] + lines:
        output.append('  '.join(text.ljust(width)
                                for text, width in zip(item, widths)).rstrip())
    return '\n'.join(output) + '\n'


def format_report(report):
    "Returns a short text rendering of an EvalReport and its breakdown"
    meta = report.meta_summary()
    lines = [
        f"entries: {meta['n']}",
        f"exact: {meta['exact_count']} ({meta['acc_exact']})",
        f"alias: {meta['alias_count']} ({meta['acc_alias']})",
        f"parse failures: {meta['parse_failure_count']}",
    ]
    breakdown = report.breakdown()
    if len(breakdown) > 1:
        for epsilon, part in breakdown:
            part_meta = part.meta_summary()
            lines.append(f"  epsilon {epsilon:.2f}: exact "
                         f"{part_meta['acc_exact']} alias "
                         f"{part_meta['acc_alias']}")
    return '\n'.join(lines) + '\n'


def explode_trace(demo, language):
    "Yields one row per step of a demonstration"
    for number, (percepts, action) in enumerate(demo.steps):
        yield {
            'step': number,
            'percepts': ''.join('1' if bit else '0' for bit in percepts),
            'action': action,
            'action_name': language.action_names[action],
        }


def write_trace(handle, demo, language, in_csv=False):
    "Output a demonstration step by step, as CSV or plain text"
    if in_csv:
        writer = csv.DictWriter(handle, dialect='excel',
                                fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for row in explode_trace(demo, language):
            writer.writerow(row)
        return
    for row in explode_trace(demo, language):
        handle.write(f"{row['step']:>3}  {row['percepts']}  "
                     f"{row['action_name']}\n")
    handle.write(f"terminated: {demo.terminated.value}\n")


def vocabulary_report(language, visual):
    "Returns the program and visual vocabularies as a dictionary"
    return {
        'program': language.vocabulary.table(),
        'program_size': len(language.vocabulary),
        'visual': visual.convention(),
        'percepts': dict(zip(language.percept_names,
                             PERCEPT_NAMES[:language.q])),
    }


def write_vocab_json(handle, language, visual):
    "Output the vocabularies as JSON"
    json.dump(vocabulary_report(language, visual), handle, indent=4,
              sort_keys=True)
    handle.write('\n')
