import { ApiError, StudioApi } from './api.js';
import type { FinetuneRequest, JobRecord } from './types.js';

export const POLL_INTERVAL_MS = 1000;

// The monitor plots at most this many trace entries (a default fine-tune run
// produces exactly 200).
export const TRACE_LIMIT = 200;

export interface MonitorUpdate {
    job: JobRecord | null;
    trace: number[];
    message: string | null;
}

export interface MonitorCallbacks {
    onUpdate(update: MonitorUpdate): void;
    /** Called with the refreshed model list once a job completes. */
    onModels(models: string[]): void;
    /** Ask the user whether to switch the studio to the new model. */
    confirmSwap(modelId: string): boolean | Promise<boolean>;
    onActivate(modelId: string): void;
}

/** Submits fine-tune jobs and polls /jobs/{id} once a second until the job
 * reaches a terminal state.  Completed jobs refresh the model picker and only
 * swap the active model after the user confirms. */
export class FinetuneMonitor {
    private api: StudioApi;
    private callbacks: MonitorCallbacks;
    private timer: ReturnType<typeof setTimeout> | null = null;
    private jobId: string | null = null;

    constructor(api: StudioApi, callbacks: MonitorCallbacks) {
        this.api = api;
        this.callbacks = callbacks;
    }

    async submit(req: FinetuneRequest): Promise<string | null> {
        try {
            const res = await this.api.finetune(req);
            this.track(res.job_id);
            return res.job_id;
        } catch (err) {
            let message: string;
            if (err instanceof ApiError && err.status === 409) {
                message = 'model busy';
            } else if (err instanceof ApiError) {
                message = err.detail;
            } else {
                message = String(err);
            }
            this.callbacks.onUpdate({ job: null, trace: [], message });
            return null;
        }
    }

    /** Start (or resume, e.g. after a page refresh) polling a job. */
    track(jobId: string): void {
        this.stop();
        this.jobId = jobId;
        void this.poll(jobId);
    }

    stop(): void {
        if (this.timer !== null) {
            clearTimeout(this.timer);
            this.timer = null;
        }
        this.jobId = null;
    }

    private async poll(jobId: string): Promise<void> {
        let job: JobRecord;
        try {
            job = await this.api.job(jobId);
        } catch (err) {
            this.jobId = null;
            this.callbacks.onUpdate({
                job: null,
                trace: [],
                message: err instanceof ApiError ? err.detail : String(err),
            });
            return;
        }
        if (this.jobId !== jobId) {
            return; // switched to a different job while the request was in flight
        }
        const trace = job.loss_trace.slice(-TRACE_LIMIT);
        if (job.status === 'done') {
            this.jobId = null;
            this.callbacks.onUpdate({ job, trace, message: null });
            const models = await this.api.listModels();
            this.callbacks.onModels(models.models);
            if (job.result_model_id) {
                const confirmed = await this.callbacks.confirmSwap(job.result_model_id);
                if (confirmed) {
                    this.callbacks.onActivate(job.result_model_id);
                }
            }
            return;
        }
        if (job.status === 'failed') {
            this.jobId = null;
            this.callbacks.onUpdate({ job, trace, message: job.error ?? 'job failed' });
            return;
        }
        this.callbacks.onUpdate({ job, trace, message: null });
        this.timer = setTimeout(() => {
            this.timer = null;
            void this.poll(jobId);
        }, POLL_INTERVAL_MS);
    }
}
