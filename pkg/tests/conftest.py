import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from writeoff.spell_data import (
    CovariateSchema,
    Resolution,
    SpellPanel,
    SpellRecord,
)


def month_label(index: int, base_year: int = 2015) -> str:
    """Calendar label for month ``index`` (1-based) from January base_year."""
    year, month = divmod(index - 1, 12)
    return f"{base_year + year}-{month + 1:02d}"


def make_spell_rows(loan_id, spell_num, first_period, entry, stop, resolution,
                    covariates=None):
    """Expand one spell into its month-end records.

    ``first_period`` is the loan-age of the spell's first record; rows run
    over spell periods entry+1 .. stop with the event flagged only in the
    final period of a written-off spell.
    """
    rows = []
    periods = list(range(entry + 1, stop + 1))
    for k, sp in enumerate(periods):
        loan_age = first_period + k
        rows.append(SpellRecord(
            loan_id=str(loan_id),
            period=loan_age,
            spell_num=spell_num,
            spell_period=sp,
            entry_time=entry,
            stop_time=stop,
            resolution=resolution,
            spell_age=stop - entry,
            event=1 if (resolution == Resolution.WRITE_OFF
                        and k == len(periods) - 1) else 0,
            reporting_month=month_label(loan_age),
            covariates=covariates or {},
        ))
    return rows


@pytest.fixture
def four_loan_panel() -> SpellPanel:
    """Reference panel: recurrence, left truncation and all outcome types.

    Loan 1 writes off after two months; loan 2 is censored; loan 3 cures
    then writes off in a second spell; loan 4 enters left-truncated, cures
    twice and ends censored.
    """
    rows = []
    rows += make_spell_rows(1, 1, 5, 0, 2, Resolution.WRITE_OFF)
    rows += make_spell_rows(2, 1, 12, 0, 3, Resolution.CENSORED)
    rows += make_spell_rows(3, 1, 6, 0, 2, Resolution.CURED)
    rows += make_spell_rows(3, 2, 24, 0, 3, Resolution.WRITE_OFF)
    rows += make_spell_rows(4, 1, 13, 12, 15, Resolution.CURED)
    rows += make_spell_rows(4, 2, 24, 0, 4, Resolution.CURED)
    rows += make_spell_rows(4, 3, 40, 0, 2, Resolution.CENSORED)
    return SpellPanel(rows, CovariateSchema())
