import type {
    FinetuneRequest,
    FinetuneResponse,
    HealthResponse,
    InterpolateRequest,
    InterpolateResponse,
    JobRecord,
    ModelsResponse,
    StylizeRequest,
    StylizeResponse,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
    status: number;
    detail: string;

    constructor(status: number, detail: string) {
        super(`HTTP ${status}: ${detail}`);
        this.name = 'ApiError';
        this.status = status;
        this.detail = detail;
    }
}

/** Thin client over the service API. Every request the studio makes goes
 * through here, so the full set of endpoints the UI can hit is the six
 * methods below. `fetchFn` is injectable for tests. */
export class StudioApi {
    private baseUrl: string;
    private fetchFn: FetchLike;

    constructor(baseUrl: string, fetchFn?: FetchLike) {
        this.baseUrl = baseUrl.replace(/\/+$/, '');
        this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
    }

    private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
        const init: RequestInit = { method };
        if (body !== undefined) {
            init.headers = { 'Content-Type': 'application/json' };
            init.body = JSON.stringify(body);
        }
        const response = await this.fetchFn(this.baseUrl + path, init);
        if (!response.ok) {
            let detail = response.statusText || 'request failed';
            try {
                const data = await response.json();
                if (data && typeof data.detail === 'string') {
                    detail = data.detail;
                }
            } catch {
                // non-JSON error body; keep the status text
            }
            throw new ApiError(response.status, detail);
        }
        return (await response.json()) as T;
    }

    health(): Promise<HealthResponse> {
        return this.request('GET', '/health');
    }

    listModels(): Promise<ModelsResponse> {
        return this.request('GET', '/models');
    }

    stylize(req: StylizeRequest): Promise<StylizeResponse> {
        return this.request('POST', '/stylize', req);
    }

    interpolate(req: InterpolateRequest): Promise<InterpolateResponse> {
        return this.request('POST', '/interpolate', req);
    }

    finetune(req: FinetuneRequest): Promise<FinetuneResponse> {
        return this.request('POST', '/finetune', req);
    }

    job(jobId: string): Promise<JobRecord> {
        return this.request('GET', `/jobs/${jobId}`);
    }
}
