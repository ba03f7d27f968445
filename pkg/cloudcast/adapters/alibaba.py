"""
Column mappings for the Alibaba cluster traces.

The 2018 batch_instance table has no header and time stamps in seconds.
The 2020 GPU trace yields two datasets from the same instances: CPU and
memory, or GPU utilisation and GPU memory.
"""

from . import ColumnMapping, register

batch_instance_2018_columns = [
    'instance_name', 'task_name', 'job_name', 'task_type', 'status',
    'start_time', 'end_time', 'machine_id', 'seq_no', 'total_seq_no',
    'cpu_avg', 'cpu_max', 'mem_avg', 'mem_max']

alibaba_2018 = register(ColumnMapping(
    'alibaba2018', 'start_time', 'end_time',
    dict(cpu='cpu_avg', memory='mem_avg'),
    header=False, columns=batch_instance_2018_columns))

alibaba_2020 = register(ColumnMapping(
    'alibaba2020', 'start_time', 'end_time',
    dict(cpu='cpu_usage', memory='avg_mem')))

alibaba_2020_gpu = register(ColumnMapping(
    'alibaba2020-gpu', 'start_time', 'end_time',
    dict(gpu='gpu_wrk_util', gpu_memory='avg_gpu_wrk_mem')))
