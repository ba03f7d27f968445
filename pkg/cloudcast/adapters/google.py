"""
Column mappings for the Google cluster traces.

Both traces time stamp in microseconds since the trace start.  The 2011
task_usage table has no header; the 2019 instance_usage export flattens
the nested average_usage record into dotted column names.
"""

from . import ColumnMapping, register

task_usage_2011_columns = [
    'start_time', 'end_time', 'job_id', 'task_index', 'machine_id',
    'cpu_rate', 'canonical_memory_usage', 'assigned_memory_usage',
    'unmapped_page_cache', 'total_page_cache', 'maximum_memory_usage',
    'disk_io_time', 'local_disk_space_usage', 'maximum_cpu_rate',
    'maximum_disk_io_time', 'cycles_per_instruction',
    'memory_accesses_per_instruction', 'sample_portion',
    'aggregation_type', 'sampled_cpu_usage']

google_2011 = register(ColumnMapping(
    'google2011', 'start_time', 'end_time',
    dict(cpu='cpu_rate', memory='canonical_memory_usage'),
    time_scale=1e-6, header=False, columns=task_usage_2011_columns))

google_2019 = register(ColumnMapping(
    'google2019', 'start_time', 'end_time',
    dict(cpu='average_usage.cpus', memory='average_usage.memory'),
    time_scale=1e-6))
