"""Create run_traces and bench_reports tables

Revision ID: 3f1c2a9b7d40
Revises:
Create Date: 2026-10-18 10:12:04.118230

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '3f1c2a9b7d40'
down_revision: Union[str, None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    """Upgrade schema."""
    op.create_table('run_traces',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('problem_id', sa.String(), nullable=False),
    sa.Column('mode', sa.String(), nullable=False),
    sa.Column('termination', sa.String(), nullable=False),
    sa.Column('iterations', sa.Integer(), nullable=False),
    sa.Column('total_tokens', sa.Integer(), nullable=False),
    sa.Column('config_hash', sa.String(), nullable=False),
    sa.Column('template_hash', sa.String(), nullable=False),
    sa.Column('trace_json', sa.Text(), nullable=False),
    sa.Column('created_at', sa.DateTime(timezone=True), server_default=sa.text('(CURRENT_TIMESTAMP)'), nullable=True),
    sa.PrimaryKeyConstraint('id')
    )
    with op.batch_alter_table('run_traces', schema=None) as batch_op:
        batch_op.create_index(batch_op.f('ix_run_traces_id'), ['id'], unique=False)
        batch_op.create_index(batch_op.f('ix_run_traces_problem_id'), ['problem_id'], unique=False)
        batch_op.create_index('ix_run_traces_problem_mode', ['problem_id', 'mode'], unique=False)

    op.create_table('bench_reports',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('dataset_path', sa.String(), nullable=False),
    sa.Column('modes', sa.String(), nullable=False),
    sa.Column('report_json', sa.Text(), nullable=False),
    sa.Column('markdown', sa.Text(), nullable=False),
    sa.Column('created_at', sa.DateTime(timezone=True), server_default=sa.text('(CURRENT_TIMESTAMP)'), nullable=True),
    sa.PrimaryKeyConstraint('id')
    )
    with op.batch_alter_table('bench_reports', schema=None) as batch_op:
        batch_op.create_index(batch_op.f('ix_bench_reports_id'), ['id'], unique=False)


def downgrade() -> None:
    """Downgrade schema."""
    with op.batch_alter_table('bench_reports', schema=None) as batch_op:
        batch_op.drop_index(batch_op.f('ix_bench_reports_id'))
    op.drop_table('bench_reports')

    with op.batch_alter_table('run_traces', schema=None) as batch_op:
        batch_op.drop_index('ix_run_traces_problem_mode')
        batch_op.drop_index(batch_op.f('ix_run_traces_problem_id'))
        batch_op.drop_index(batch_op.f('ix_run_traces_id'))
    op.drop_table('run_traces')
